#include <filesystem>
#include <iostream>

#include "fixtures.hpp"

int main() {
  const auto& world = npi::testing::toy_world();
  // Plain-text companions so the command-line tests can drive the same model.
  const std::filesystem::path dir(NPI_FIXTURE_DIR);
  npi::write_file((dir / "toy_corpus.txt").string(), world.text);
  npi::write_file((dir / "toy_vocab.txt").string(), world.vocab.serialize());
  std::cout << "toy model ready: " << world.lm.parameter_count() << " parameters, vocabulary " << world.vocab.size()
            << "\n";
  return 0;
}
