#include "ftf/cli.hpp"

int main(int argc, char** argv) {
  return ftf::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
