#include "dtfit/cli.hpp"

int main(int argc, char** argv) { return dtfit::dispatch(argc, argv); }
