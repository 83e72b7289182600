#include <atomic>
#include <cstdlib>
#include <string>

#include "levylab/kernels.hpp"

namespace levylab::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::avx2:
      return cpu_has_avx2() ? avx2_table() : nullptr;
    case Isa::neon:
      return neon_table();
    case Isa::scalar:
      return &scalar_table();
  }
  return nullptr;
}

Isa detect() {
  if (const char* env = std::getenv("LEVYLAB_ISA")) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && table_for(Isa::avx2)) return Isa::avx2;
    if (v == "neon" && table_for(Isa::neon)) return Isa::neon;
  }
  if (table_for(Isa::avx2)) return Isa::avx2;
  if (table_for(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

struct State {
  std::atomic<Isa> isa{detect()};
  std::atomic<const KernelTable*> table{table_for(isa.load())};
};

State& state() {
  static State s;
  return s;
}

}  // namespace

bool isa_available(Isa isa) { return table_for(isa) != nullptr; }

Isa active_isa() { return state().isa.load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_available(isa)) isa = Isa::scalar;
  state().isa.store(isa);
  state().table.store(table_for(isa));
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

const KernelTable& active() { return *state().table.load(std::memory_order_relaxed); }

}  // namespace levylab::kernels
