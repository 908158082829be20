#include "dgseg/cli.hpp"

int main(int argc, char** argv) { return dgseg::run_cli(argc, argv); }
