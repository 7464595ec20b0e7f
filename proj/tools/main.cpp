#include "promptvar/cli.hpp"

int main(int argc, char** argv) { return promptvar::run_cli(argc, argv); }
