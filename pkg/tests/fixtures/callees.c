int fill(char *dst, const char *src)
{
    strcpy(dst, src);
    return strlen(dst);
}

int handle(char *req, int size)
{
    char local[64];
    int n = fill(local, req) - 1;
    if (n > size)
        n = size;
    return n;
}
