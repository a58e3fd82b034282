#include "dprobe/cli.hpp"

int main(int argc, char** argv) { return dprobe::cli_main(argc, argv); }
