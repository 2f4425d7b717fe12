#include "windadj/cli.hpp"

int main(int argc, char** argv) { return windadj::run_cli(argc, argv); }
