#include <vector>
#include <string>

#include "flowface/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return flowface::run_cli(args);
}
