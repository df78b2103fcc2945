#include <string>
#include <vector>

#include "resid_cli.hpp"

int main(int argc, char** argv) {
  return resid::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
