#include <string>
#include <vector>

#include "protodg/cli.hpp"

int main(int argc, char** argv) { return protodg::run_cli(std::vector<std::string>(argv + 1, argv + argc)); }
