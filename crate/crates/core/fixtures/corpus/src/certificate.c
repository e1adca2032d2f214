#include <stdlib.h>
#include <string.h>

#include "../include/cert.h"

struct x509_st
{
	unsigned char *der;
	size_t len;
};

struct rdp_certificate
{
	X509 *x509;
	char *pem;
	size_t pem_len;
};

X509 *X509_dup(const X509 *src)
{
	X509 *x = calloc(1, sizeof(X509));
	if (!x)
		return NULL;
	x->len = src->len;
	return x;
}

void X509_free(X509 *x)
{
	if (!x)
		return;
	free(x->der);
	free(x);
}

rdpCertificate *freerdp_certificate_new(void)
{
	return (rdpCertificate *)calloc(1, sizeof(rdpCertificate));
}

static void certificate_free_int(rdpCertificate *cert)
{
	if (!cert)
		return;
	X509_free(cert->x509);
	free(cert->pem);
	free(cert);
}

void freerdp_certificate_free(rdpCertificate *cert)
{
	certificate_free_int(cert);
}

rdpCertificate *freerdp_certificate_clone(const rdpCertificate *certificate)
{
	if (!certificate)
		return NULL;

	rdpCertificate *_certificate = freerdp_certificate_new();
	if (!_certificate)
		return NULL;

	if (certificate->x509)
	{
		_certificate->x509 = X509_dup(certificate->x509);
		if (!_certificate->x509)
			goto out_fail;
	}

	if (certificate->pem)
	{
		_certificate->pem = strdup(certificate->pem);
		if (!_certificate->pem)
			goto out_fail;
		_certificate->pem_len = certificate->pem_len;
	}

	return _certificate;
out_fail:
	freerdp_certificate_free(_certificate);
	return NULL;
}

BOOL freerdp_settings_set_certificate(rdpSettings *settings, const rdpCertificate *src)
{
	rdpCertificate *cert = freerdp_certificate_clone(src);
	if (!cert)
		goto out_fail;
	if (!freerdp_settings_set_pointer_len(settings, FreeRDP_RdpServerCertificate, cert, 1))
		goto out_fail;
	return TRUE;

out_fail:
	return FALSE;
}
