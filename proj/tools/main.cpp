#include <vector>

#include "rgbdmae/pipeline.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rgbdmae::cli_main(args);
}
