#include "gwad/trace.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gwad {

namespace {

constexpr char kTraceMagic[4] = {'G', 'W', 'T', 'R'};
constexpr std::uint32_t kTraceVersion = 1;

template <typename T>
void write_le(std::ostream& os, T value) {
  // Host is little-endian on every supported target; memcpy keeps this UB-free.
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  os.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  char buf[sizeof(T)];
  is.read(buf, sizeof(T));
  if (!is) throw std::runtime_error("trace file truncated");
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

}  // namespace

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::ZerothOrder: return "zeroth_order";
    case Phase::LineSearch: return "line_search";
    case Phase::Other: return "other";
    case Phase::InjectedBenign: return "injected_benign";
  }
  return "unknown";
}

void QueryTrace::append(std::span<const double> query, Phase phase, std::uint32_t iteration) {
  if (dim_ == 0) dim_ = static_cast<std::uint32_t>(query.size());
  if (query.size() != dim_) throw std::invalid_argument("QueryTrace: dimension mismatch");
  for (double v : query) data_.push_back(static_cast<float>(v));
  phases_.push_back(phase);
  iterations_.push_back(iteration);
}

void QueryTrace::append(std::span<const float> query, Phase phase, std::uint32_t iteration) {
  if (dim_ == 0) dim_ = static_cast<std::uint32_t>(query.size());
  if (query.size() != dim_) throw std::invalid_argument("QueryTrace: dimension mismatch");
  data_.insert(data_.end(), query.begin(), query.end());
  phases_.push_back(phase);
  iterations_.push_back(iteration);
}

void QueryTrace::reserve(std::size_t n) {
  data_.reserve(n * dim_);
  phases_.reserve(n);
  iterations_.reserve(n);
}

void write_trace(const QueryTrace& trace, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open trace file for writing: " + path.string());
  os.write(kTraceMagic, 4);
  write_le<std::uint32_t>(os, kTraceVersion);
  write_le<std::uint32_t>(os, trace.dim());
  write_le<std::uint64_t>(os, trace.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    write_le<std::uint8_t>(os, static_cast<std::uint8_t>(trace.phase(i)));
    write_le<std::uint32_t>(os, trace.iteration(i));
    const auto q = trace.query(i);
    os.write(reinterpret_cast<const char*>(q.data()),
             static_cast<std::streamsize>(q.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("failed writing trace file: " + path.string());
}

QueryTrace read_trace(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open trace file: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kTraceMagic, 4) != 0) {
    throw std::runtime_error("bad trace magic in " + path.string());
  }
  const auto version = read_le<std::uint32_t>(is);
  if (version != kTraceVersion) {
    throw std::runtime_error("unsupported trace version " + std::to_string(version));
  }
  const auto dim = read_le<std::uint32_t>(is);
  const auto count = read_le<std::uint64_t>(is);
  if (dim == 0) throw std::runtime_error("trace has zero dimension");
  QueryTrace trace(dim);
  trace.reserve(count);
  std::vector<float> query(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto tag = read_le<std::uint8_t>(is);
    if (tag > 3) throw std::runtime_error("bad phase tag in trace");
    const auto iteration = read_le<std::uint32_t>(is);
    is.read(reinterpret_cast<char*>(query.data()),
            static_cast<std::streamsize>(query.size() * sizeof(float)));
    if (!is) throw std::runtime_error("trace file truncated");
    trace.append(std::span<const float>(query), static_cast<Phase>(tag), iteration);
  }
  return trace;
}

PhaseFractions consumption_profile(const QueryTrace& trace) {
  if (trace.empty()) throw std::invalid_argument("consumption_profile: empty trace");
  std::array<std::size_t, 4> counts{};
  for (std::size_t i = 0; i < trace.size(); ++i) {
    counts[static_cast<std::size_t>(trace.phase(i))]++;
  }
  const double n = static_cast<double>(trace.size());
  PhaseFractions f;
  f.zeroth_order = counts[0] / n;
  f.line_search = counts[1] / n;
  f.other = counts[2] / n;
  f.injected_benign = counts[3] / n;
  return f;
}

}  // namespace gwad
