#include <string>
#include <vector>

#include "flowdeblur/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return flowdeblur::run_cli(args);
}
