#include <string.h>

int copy_name(char *dst, const char *src, int max)
{
    char buf[16];
    int len = 0;
    strcpy(buf, src);
    len = strlen(buf);
    if (len > max)
        return -1;
    memcpy(dst, buf, len + 1);
    return len;
}

int checked_len(const char *s, int limit)
{
    int n = 0;
    while (s[n] && n < limit)
        n++;
    return n;
}
