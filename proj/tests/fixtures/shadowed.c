#include <stdio.h>

int lib_only(int x);

__attribute__((noinline)) int f(int x) { return x + 1; }

int main(void) {
  printf("%d %d\n", f(1), lib_only(2));
  return 0;
}
