#include "cli.hpp"

int main(int argc, char** argv) { return catreid::cli::run(argc, argv); }
