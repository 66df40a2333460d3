#include <cstdlib>
#include <string>

#include "inpk/errors.hpp"
#include "inpk/kernels.hpp"

namespace inpk::kernels {
namespace {

const KernelTable* pick_default() {
  if (const char* env = std::getenv("PKI_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && cpu_supports(Isa::avx2)) return avx2_table();
  }
  if (cpu_supports(Isa::avx2)) return avx2_table();
  return &scalar_table();
}

const KernelTable*& current() {
  static const KernelTable* table = pick_default();
  return table;
}

}  // namespace

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
      return avx2_table() != nullptr && __builtin_cpu_supports("avx2") &&
             __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

const KernelTable& active() { return *current(); }

void select(Isa isa) {
  if (!cpu_supports(isa))
    throw ConfigError("kernel variant '" + std::string(isa_name(isa)) + "' is not available");
  current() = isa == Isa::avx2 ? avx2_table() : &scalar_table();
}

}  // namespace inpk::kernels
