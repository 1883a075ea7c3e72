#include <cstdio>

int main() {
  std::puts("asn: placeholder");
  return 0;
}
