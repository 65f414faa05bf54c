#include <string>
#include <vector>

#include "app.hpp"

int main(int argc, char** argv) {
  return adaptimpute::cli::run(std::vector<std::string>(argv, argv + argc));
}
