#pragma once

#include <ostream>

namespace region_styler {

/// Entry point of the `region-styler` command line tool. Subcommands: segment,
/// stylize, eval, serve, make-dataset, fit-autoencoder.
///
/// Exit codes: 0 success, 1 validation or user error, 2 internal error
/// (including backend failures and non-finite losses).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace region_styler
