#include <zlib.h>

#include <array>
#include <fstream>
#include <string>

#include "abis/detail/bytes.hpp"
#include "abis/error.hpp"
#include "abis/index.hpp"

namespace abis {
namespace {

constexpr std::array<char, 4> kGalleryMagic{'B', 'G', 'A', 'L'};
constexpr std::uint16_t kGalleryVersion = 1;

class Crc32 {
 public:
  void update(std::span<const std::byte> data) {
    crc_ = ::crc32(crc_, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size()));
  }
  std::uint32_t value() const noexcept { return static_cast<std::uint32_t>(crc_); }

 private:
  uLong crc_ = ::crc32(0L, Z_NULL, 0);
};

std::array<std::byte, kGalleryHeaderBytes> encode_header(std::uint64_t n_rows, std::uint32_t crc) {
  std::array<std::byte, kGalleryHeaderBytes> h{};
  for (std::size_t i = 0; i < 4; ++i) h[i] = static_cast<std::byte>(kGalleryMagic[i]);
  detail::put_le<std::uint16_t>(h.data() + 4, kGalleryVersion);
  detail::put_le<std::uint16_t>(h.data() + 6, 0);
  detail::put_le<std::uint64_t>(h.data() + 8, n_rows);
  detail::put_le<std::uint32_t>(h.data() + 16, static_cast<std::uint32_t>(kTemplateDim));
  detail::put_le<std::uint32_t>(h.data() + 20, crc);
  return h;
}

// Streams records to `path`; the header is rewritten with the CRC at the end.
template <typename ForEach>
void write_records(const std::filesystem::path& path, std::uint64_t n_rows, ForEach&& for_each) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    auto header = encode_header(n_rows, 0);
    out.write(reinterpret_cast<const char*>(header.data()), header.size());
    Crc32 crc;
    std::vector<std::byte> record(kRecordBytes);
    for_each([&](const MultiBiometricTemplate& t) {
      serialize_template_into(t, record);
      crc.update(record);
      out.write(reinterpret_cast<const char*>(record.data()), static_cast<std::streamsize>(record.size()));
    });
    header = encode_header(n_rows, crc.value());
    out.seekp(0);
    out.write(reinterpret_cast<const char*>(header.data()), header.size());
    out.flush();
    if (!out) raise(ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) raise(ErrorCode::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

template <typename Sink>
void read_records(const std::filesystem::path& path, Sink&& sink) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::Io, "cannot open " + path.string());
  std::array<std::byte, kGalleryHeaderBytes> h{};
  if (!in.read(reinterpret_cast<char*>(h.data()), h.size())) {
    raise(ErrorCode::Format, path.string() + ": truncated header");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (h[i] != static_cast<std::byte>(kGalleryMagic[i])) raise(ErrorCode::Format, path.string() + ": bad magic");
  }
  if (detail::get_le<std::uint16_t>(h.data() + 4) != kGalleryVersion) {
    raise(ErrorCode::Format, path.string() + ": unsupported version");
  }
  const auto n_rows = detail::get_le<std::uint64_t>(h.data() + 8);
  if (detail::get_le<std::uint32_t>(h.data() + 16) != kTemplateDim) {
    raise(ErrorCode::Format, path.string() + ": dimension mismatch");
  }
  const auto expected_crc = detail::get_le<std::uint32_t>(h.data() + 20);

  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec || file_size != kGalleryHeaderBytes + n_rows * kRecordBytes) {
    raise(ErrorCode::Format, path.string() + ": size does not match row count");
  }
  Crc32 crc;
  std::vector<std::byte> record(kRecordBytes);
  for (std::uint64_t r = 0; r < n_rows; ++r) {
    if (!in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(record.size()))) {
      raise(ErrorCode::Format, path.string() + ": truncated record");
    }
    crc.update(record);
    sink(deserialize_template(record));
  }
  if (crc.value() != expected_crc) raise(ErrorCode::Format, path.string() + ": checksum mismatch");
}

}  // namespace

void save_gallery(const Gallery& gallery, const std::filesystem::path& path) {
  write_records(path, gallery.size(), [&](auto&& emit) {
    for (const auto& shard : gallery.shards()) {
      for (std::size_t r = 0; r < shard.size(); ++r) {
        const TemplateView v = shard.view(r);
        emit(make_template(v.vector, v.presence, v.quality, v.subject_id));
      }
    }
  });
}

Gallery load_gallery(const std::filesystem::path& path, std::size_t shard_size, std::size_t max_rows) {
  Gallery g(shard_size, max_rows);
  read_records(path, [&](MultiBiometricTemplate t) { g.insert(t); });
  return g;
}

void save_templates(std::span<const MultiBiometricTemplate> templates, const std::filesystem::path& path) {
  write_records(path, templates.size(), [&](auto&& emit) {
    for (const auto& t : templates) emit(t);
  });
}

std::vector<MultiBiometricTemplate> load_templates(const std::filesystem::path& path) {
  std::vector<MultiBiometricTemplate> out;
  read_records(path, [&](MultiBiometricTemplate t) { out.push_back(std::move(t)); });
  return out;
}

}  // namespace abis
