// Builds the mixed-state presentation of the 0-1-random process and prints
// each belief state, its outgoing edges and the pairs that share a
// next-token distribution.

#include <cstdio>

#include "bsg/bsg.hpp"

int main() {
  using namespace bsg;
  const auto hmm = zero_one_random();
  const auto msp = build_msp(hmm, 10);
  std::printf("%zu belief states\n", msp.size());
  for (std::size_t s = 0; s < msp.size(); ++s) {
    const auto& b = msp.states[s];
    std::printf("  [%zu] depth %d  (", s, msp.first_depth[s]);
    for (int i = 0; i < b.size(); ++i) std::printf("%s%.4f", i ? ", " : "", b[i]);
    std::printf(")\n");
    for (const auto& e : msp.edges[s]) {
      std::printf("      --%s (%.3f)--> %zu\n", hmm.vocab()[static_cast<std::size_t>(e.token)].c_str(), e.probability,
                  e.next);
    }
  }
  std::printf("next-token degenerate pairs:\n");
  for (const auto& [a, b] : degeneracy_report(hmm, msp, 1e-12)) std::printf("  %zu %zu\n", a, b);
}
