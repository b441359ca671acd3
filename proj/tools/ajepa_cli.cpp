#include <string>
#include <vector>

#include "ajepa/cli.hpp"

int main(int argc, char** argv) {
  return ajepa::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
