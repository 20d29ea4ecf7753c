// Writes the generated CLI and configuration reference page.

#include <fstream>
#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: catreid-docgen OUTPUT.md\n";
    return 2;
  }
  std::ofstream out(argv[1]);
  if (!out) {
    std::cerr << "cannot write " << argv[1] << "\n";
    return 5;
  }
  out << catreid::cli::reference_markdown();
  return 0;
}
