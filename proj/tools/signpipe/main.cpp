// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "signpipe/cli.hpp"

int main(int argc, char** argv)
{
    return signpipe::run_cli(argc, argv, std::cout, std::cerr);
}
