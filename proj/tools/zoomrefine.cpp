// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "zoomrefine/cli.hpp"

int main(int argc, char** argv) { return zoomrefine::cli_main(argc, argv, std::cout, std::cerr); }
