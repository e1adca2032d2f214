#include <stdlib.h>

#define OPENSSL_zalloc(num) calloc(1, num)
#define OPENSSL_free(addr) free(addr)

#define X509_PCY_TREE_FAILURE -2
#define X509_PCY_TREE_INVALID -1
#define X509_PCY_TREE_VALID 1
#define X509_PCY_TREE_EMPTY 2
#define X509_PCY_TREE_EXPLICIT 4
#define X509_V_FLAG_EXPLICIT_POLICY 0x100

typedef struct x509_stack X509_STACK;
typedef struct X509_POLICY_LEVEL_st X509_POLICY_LEVEL;
typedef struct X509_POLICY_TREE_st X509_POLICY_TREE;

struct X509_POLICY_LEVEL_st
{
	int flags;
};

struct X509_POLICY_TREE_st
{
	X509_POLICY_LEVEL *levels;
	int nlevel;
};

int sk_X509_num(const X509_STACK *sk);

void X509_policy_tree_free(X509_POLICY_TREE *tree)
{
	if (tree == NULL)
		return;
	OPENSSL_free(tree->levels);
	OPENSSL_free(tree);
}

static X509_POLICY_TREE *tree_init(X509_STACK *certs, unsigned int flags, int *pret)
{
	X509_POLICY_TREE *tree;
	int n = sk_X509_num(certs);

	*pret = X509_PCY_TREE_INVALID;
	if (n == 0)
		return NULL;
	tree = OPENSSL_zalloc(sizeof(*tree));
	if (tree == NULL)
		return NULL;
	tree->levels = OPENSSL_zalloc(sizeof(X509_POLICY_LEVEL) * n);
	if (tree->levels == NULL) {
		OPENSSL_free(tree);
		return NULL;
	}
	tree->nlevel = n;
	if (flags & X509_V_FLAG_EXPLICIT_POLICY)
		*pret = X509_PCY_TREE_EXPLICIT | X509_PCY_TREE_EMPTY;
	else
		*pret = X509_PCY_TREE_EMPTY;
	return tree;
}

int X509_policy_check(X509_POLICY_TREE **ptree, int *pexplicit_policy,
                      X509_STACK *certs, unsigned int flags)
{
	int init_ret = 0;
	X509_POLICY_TREE *tree = tree_init(certs, flags, &init_ret);

	*ptree = NULL;
	*pexplicit_policy = 0;
	if (tree == NULL)
		return X509_PCY_TREE_FAILURE;

	if (init_ret & X509_PCY_TREE_EMPTY) {
		if (init_ret & X509_PCY_TREE_EXPLICIT) {
			*pexplicit_policy = 1;
			return X509_PCY_TREE_FAILURE;
		}
		X509_policy_tree_free(tree);
		return X509_PCY_TREE_VALID;
	}

	*ptree = tree;
	return X509_PCY_TREE_VALID;
}
