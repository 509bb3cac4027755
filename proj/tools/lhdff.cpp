#include <cstdio>

int main() {
  std::puts("lhdff: subcommands not wired up yet");
  return 0;
}
