// SPDX-License-Identifier: Apache-2.0
#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) { return tokentm::cli::run(std::vector<std::string>(argv, argv + argc)); }
