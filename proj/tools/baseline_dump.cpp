// Runs the canonical toy model through the bare runtime, with no injection
// code linked in, and writes the serialized run.

#include <fstream>
#include <iostream>

#include "run_dump.hpp"
#include "sinktrack/error.hpp"
#include "sinktrack/tensor_file.hpp"
#include "sinktrack/toy_model.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: stk_baseline_dump OUT\n";
    return 2;
  }
  try {
    using namespace sinktrack;
    const auto model = make_toy_model(canonical_config(), kCanonicalSeed);
    const auto prompt = dump::baseline_prompt();
    auto run = generate(model, prompt, dump::kBaselineNewTokens, dump::baseline_flags());
    const auto bytes = dump::encode_run(run);
    std::ofstream out(argv[1], std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(std::string("write failed: ") + argv[1]);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
