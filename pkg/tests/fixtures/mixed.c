int scale(int x, int k)
{
    int y = x * k;
    return y;
}

int jump(int a)
{
    if (a < 0)
        goto out;
    a = a + 1;
out:
    return a;
}

void greet(char *out, const char *name)
{
    sprintf(out, "hello %s", name);
}
