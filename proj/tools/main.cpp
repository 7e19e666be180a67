#include <cstdio>

int main() {
  std::puts("istk placeholder");
  return 0;
}
