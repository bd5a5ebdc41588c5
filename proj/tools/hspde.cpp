#include "hspde/app.hpp"

int main(int argc, char** argv) { return hspde::run_cli(argc, argv); }
