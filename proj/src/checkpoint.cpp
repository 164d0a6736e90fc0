// *.glabckpt layout:
//
//   GLAB-CKPT/1
//   width <int>
//   n <int>
//   depth 4
//   head_layer 1
//   sigma_data <double>
//   iteration <int>
//   arrays <count>
//   then per array: "<name> <count>\n" followed by count little-endian float64 values and "\n"
//
// Arrays appear in the NetParams block order.
#include "glab/net.hpp"
#include "glab/util.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <sstream>

namespace glab::net {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::string line() {
    const auto end = bytes_.find('\n', pos_);
    if (end == std::string::npos) throw ValidationError("checkpoint: truncated header");
    std::string out = bytes_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return out;
  }

  std::pair<std::string, std::string> field() {
    const std::string l = line();
    const auto space = l.find(' ');
    if (space == std::string::npos) throw ValidationError("checkpoint: malformed header line '" + l + "'");
    return {l.substr(0, space), l.substr(space + 1)};
  }

  void doubles(double* out, std::size_t count) {
    const std::size_t len = count * sizeof(double);
    if (pos_ + len + 1 > bytes_.size()) throw ValidationError("checkpoint: truncated array data");
    std::memcpy(out, bytes_.data() + pos_, len);
    pos_ += len;
    if (bytes_[pos_] != '\n') throw ValidationError("checkpoint: array terminator missing");
    ++pos_;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

long long parse_int(const std::string& key, const std::string& value) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ValidationError("checkpoint: bad integer for '" + key + "'");
  }
  return out;
}

std::string expect(Reader& r, const std::string& key) {
  auto [k, v] = r.field();
  if (k != key) throw ValidationError("checkpoint: expected '" + key + "', found '" + k + "'");
  return v;
}

}  // namespace

std::string checkpoint_bytes(const NetParams& params, std::int64_t iteration) {
  std::ostringstream out;
  out << kCheckpointMagic << '\n'
      << "width " << params.width() << '\n'
      << "n " << params.features() << '\n'
      << "depth " << kHiddenLayers << '\n'
      << "head_layer " << kHeadLayer << '\n'
      << "sigma_data " << format_double(params.sigma_data()) << '\n'
      << "iteration " << iteration << '\n'
      << "arrays " << params.set().blocks().size() << '\n';
  const auto flat = params.set().flat();
  for (const auto& b : params.set().blocks()) {
    const std::size_t count = static_cast<std::size_t>(b.rows * b.cols);
    out << b.name << ' ' << count << '\n';
    out.write(reinterpret_cast<const char*>(flat.data() + b.offset), static_cast<std::streamsize>(count * sizeof(double)));
    out << '\n';
  }
  return out.str();
}

Checkpoint checkpoint_from_bytes(const std::string& bytes) {
  Reader r(bytes);
  if (r.line() != kCheckpointMagic) throw ValidationError("checkpoint: unknown magic");
  const auto width = parse_int("width", expect(r, "width"));
  const auto n = parse_int("n", expect(r, "n"));
  const auto depth = parse_int("depth", expect(r, "depth"));
  const auto head_layer = parse_int("head_layer", expect(r, "head_layer"));
  const std::string sd_text = expect(r, "sigma_data");
  double sigma_data = 0.0;
  std::from_chars(sd_text.data(), sd_text.data() + sd_text.size(), sigma_data);
  const auto iteration = parse_int("iteration", expect(r, "iteration"));
  if (width < 1 || width > 4096 || n != width) throw ValidationError("checkpoint: dimension mismatch (width/n)");
  if (depth != kHiddenLayers || head_layer != kHeadLayer) throw ValidationError("checkpoint: dimension mismatch (depth/head_layer)");
  if (!(sigma_data > 0.0)) throw ValidationError("checkpoint: invalid sigma_data");

  NetParams params = NetParams::zeros(static_cast<int>(width), sigma_data);
  const auto& blocks = params.set().blocks();
  const auto arrays = parse_int("arrays", expect(r, "arrays"));
  if (arrays != static_cast<long long>(blocks.size())) throw ValidationError("checkpoint: array count mismatch");
  auto flat = params.set().flat();
  for (const auto& b : blocks) {
    const auto count = parse_int(b.name, expect(r, b.name));
    if (count != b.rows * b.cols) throw ValidationError("checkpoint: dimension mismatch in '" + b.name + "'");
    r.doubles(flat.data() + b.offset, static_cast<std::size_t>(count));
  }
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
  return Checkpoint{std::move(params), iteration, short_hash(bytes)};
}

std::string save_checkpoint(const NetParams& params, std::int64_t iteration, const std::filesystem::path& path) {
  const std::string bytes = checkpoint_bytes(params, iteration);
  write_file(path, bytes);
  return short_hash(bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("file not found: " + path.string());
  return checkpoint_from_bytes(read_file(path));
}

}  // namespace glab::net
