// SPDX-License-Identifier: Apache-2.0
#include "maginet/cli.hpp"

int main(int argc, char** argv) { return maginet::cli::run(argc, argv); }
