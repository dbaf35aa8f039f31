#pragma once

namespace dtfit {

// Full pipeline entry point. Exit codes: 0 success, 1 usage error,
// 2 runtime error.
int dispatch(int argc, const char* const* argv);

}  // namespace dtfit
