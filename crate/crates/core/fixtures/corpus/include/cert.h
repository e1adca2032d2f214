#ifndef CERT_H
#define CERT_H

#include <stddef.h>

typedef int BOOL;
#define TRUE 1
#define FALSE 0

typedef struct x509_st X509;
typedef struct rdp_certificate rdpCertificate;
typedef struct rdp_settings rdpSettings;

#define FreeRDP_RdpServerCertificate 5187

BOOL freerdp_settings_set_pointer_len(rdpSettings *settings, int id, const void *data, size_t len);

rdpCertificate *freerdp_certificate_new(void);
rdpCertificate *freerdp_certificate_clone(const rdpCertificate *certificate);
void freerdp_certificate_free(rdpCertificate *certificate);

#endif
