#include "uavsec/geometry.hpp"

#include <cstdio>

// Placeholder entry point; replaced by the full CLI once the harness lands.
int main() {
  std::puts("uavsec cli: not wired yet");
  return 1;
}
