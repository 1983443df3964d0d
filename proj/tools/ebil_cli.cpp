#include "ebil/cli.hpp"

int main(int argc, char** argv) { return ebil::cli::run(argc, argv); }
