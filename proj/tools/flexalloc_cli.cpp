#include <flexalloc/cli.hpp>

int main(int argc, char** argv) {
  return flexalloc::cli_main(std::vector<std::string>(argv + 1, argv + argc));
}
