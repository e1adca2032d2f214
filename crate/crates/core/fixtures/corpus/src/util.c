#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#define XMALLOC(n) malloc(n)
#define SAFE_FREE(p) do { free(p); (p) = NULL; } while (0)

typedef struct list_node *NodePtr;

struct list_node
{
	int value;
	NodePtr next;
};

struct cache;
struct session
{
	int id;
};

static char *g_buf;

int parse_line(const char *line);
int read_file(const char *path, char *data, size_t cap);
int apply(const char *data);
void fill(struct cache *c, const char *key);
void log_msg(const char *msg);

char *copy_name(const char *name)
{
	char *out = strdup(name);
	if (out == NULL)
		return NULL;
	return out;
}

NodePtr node_create(int v)
{
	NodePtr n = malloc(sizeof(struct list_node));
	if (!n)
		return NULL;
	n->value = v;
	n->next = NULL;
	return n;
}

void node_destroy(NodePtr n)
{
	free(n);
}

int process_record(const char *src, size_t len)
{
	char *buf = malloc(len + 1);
	int rc;

	if (!buf)
		return -1;
	memcpy(buf, src, len);
	buf[len] = '\0';
	rc = parse_line(buf);
	free(buf);
	return rc;
}

int cache_update(struct cache *c, const char *key, int use_cache)
{
	char *entry = NULL;

	if (use_cache)
		entry = copy_name(key);
	fill(c, key);
	if (use_cache)
		free(entry);
	return 0;
}

int load_config(const char *path)
{
	int rc = -1;
	char *data = malloc(4096);

	if (!data)
		return -1;
	if (read_file(path, data, 4096) < 0)
		goto cleanup;
	rc = apply(data);
cleanup:
	free(data);
	return rc;
}

void init_buffer(size_t n)
{
	g_buf = malloc(n);
}

void reset_session(struct session *s)
{
	char *tmp = XMALLOC(32);

	if (tmp == NULL)
		return;
	snprintf(tmp, 32, "%d", s->id);
	log_msg(tmp);
	SAFE_FREE(tmp);
}

int add(int a, int b)
{
	return a + b;
}

int main(int argc, char **argv)
{
	char *name;

	if (argc < 2)
		return 1;
	name = copy_name(argv[1]);
	if (!name)
		return 1;
	puts(name);
	free(name);
	return 0;
}
