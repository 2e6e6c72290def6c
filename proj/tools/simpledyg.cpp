#include <cstdio>
int main() { std::puts("simpledyg: cli under construction"); return 0; }
