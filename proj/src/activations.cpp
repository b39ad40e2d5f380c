#include "incrprobe/activations.hpp"

#include "binary_io.hpp"
#include "incrprobe/error.hpp"

namespace incrprobe {

namespace {
constexpr char kDumpMagic[4] = {'I', 'N', 'C', 'A'};
constexpr std::uint8_t kDumpVersion = 1;
}  // namespace

ActivationDump dump_activations(const Checkpoint& ckpt, const std::vector<scan::Example>& data) {
  constexpr std::size_t kChunk = 256;
  ActivationDump dump;
  dump.hidden_dim = ckpt.model.config().hidden_dim;
  dump.examples.resize(data.size());
  const long chunks = static_cast<long>((data.size() + kChunk - 1) / kChunk);
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < chunks; ++k) {
    const std::size_t begin = static_cast<std::size_t>(k) * kChunk;
    const std::size_t end = std::min(data.size(), begin + kChunk);
    std::vector<const scan::Example*> chunk;
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(&data[i]);
    auto traces = ckpt.model.encode_batch(make_batch(chunk, ckpt.vocab_in, ckpt.vocab_out));
    for (std::size_t i = begin; i < end; ++i) dump.examples[i] = std::move(traces[i - begin]);
  }
  return dump;
}

std::vector<std::uint8_t> serialize_dump(const ActivationDump& dump) {
  detail::ByteWriter w;
  w.bytes(kDumpMagic, 4);
  w.u8(kDumpVersion);
  w.u32(static_cast<std::uint32_t>(dump.examples.size()));
  w.u32(static_cast<std::uint32_t>(dump.hidden_dim));
  for (const auto& ex : dump.examples) {
    if (ex.hidden.size() != ex.length() || ex.cell.size() != ex.length()) {
      throw DimensionError("activation trace lists differ in length");
    }
    w.u32(static_cast<std::uint32_t>(ex.length()));
    for (std::size_t tok : ex.tokens) w.i32(static_cast<std::int32_t>(tok));
    for (const auto& h : ex.hidden) {
      if (h.size() != dump.hidden_dim) throw DimensionError("hidden state size mismatch");
      w.f64s(h);
    }
    for (const auto& c : ex.cell) {
      if (c.size() != dump.hidden_dim) throw DimensionError("cell state size mismatch");
      w.f64s(c);
    }
  }
  return std::move(w.buffer());
}

ActivationDump deserialize_dump(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "activation dump");
  if (r.raw(4) != std::string(kDumpMagic, 4)) throw ParseError("activation dump: bad magic");
  const auto version = r.u8();
  if (version != kDumpVersion) {
    throw ParseError("activation dump: unsupported version " + std::to_string(version));
  }
  ActivationDump dump;
  const std::uint32_t n = r.u32();
  dump.hidden_dim = r.u32();
  dump.examples.resize(n);
  for (auto& ex : dump.examples) {
    const std::uint32_t T = r.u32();
    r.need(static_cast<std::size_t>(T) * (4 + 16 * dump.hidden_dim));
    for (std::uint32_t t = 0; t < T; ++t) {
      const std::int32_t tok = r.i32();
      if (tok < 0) throw ParseError("activation dump: negative token index");
      ex.tokens.push_back(static_cast<std::size_t>(tok));
    }
    for (auto* states : {&ex.hidden, &ex.cell}) {
      states->assign(T, std::vector<double>(dump.hidden_dim));
      for (auto& s : *states)
        for (double& v : s) v = r.f64();
    }
  }
  if (!r.at_end()) throw ParseError("activation dump: trailing bytes");
  return dump;
}

void save_dump(const ActivationDump& dump, const std::filesystem::path& path) {
  detail::write_file(path.string(), serialize_dump(dump));
}

ActivationDump load_dump(const std::filesystem::path& path) {
  return deserialize_dump(detail::read_file(path.string()));
}

}  // namespace incrprobe
