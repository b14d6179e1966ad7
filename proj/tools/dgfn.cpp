#include "dgfn/cli.hpp"

int main(int argc, char** argv) { return dgfn::run_cli(argc, argv); }
