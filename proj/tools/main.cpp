#include "safe/cli.hpp"

int main(int argc, char** argv) { return safe::run_cli(argc, argv); }
