#include <string>
#include <vector>

#include "tokensieve/cli.hpp"

int main(int argc, char** argv) {
  return tokensieve::cli::run(std::vector<std::string>(argv, argv + argc));
}
