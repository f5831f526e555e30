#include <vector>

#include "faceforge/cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return faceforge::cli::run(std::move(args));
}
