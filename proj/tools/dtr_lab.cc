// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/harness.h"

int main(int argc, char** argv) { return dtr::harness::run_cli(argc, argv); }
