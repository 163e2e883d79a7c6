#include <string>
#include <vector>

#include "wmc/cli.hpp"

int main(int argc, char** argv) { return wmc::run_cli(std::vector<std::string>(argv + 1, argv + argc)); }
