#include "babylm/io.hpp"

#include <stdexcept>

namespace babylm::io {

void write_file_atomic_binary(const std::string& path, const void* data, size_t n) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + tmp);
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!os) throw std::runtime_error("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("rename failed for " + path + ": " + ec.message());
}

void write_file_atomic(const std::string& path, const std::string& content) {
  write_file_atomic_binary(path, content.data(), content.size());
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open file: " + path);
  std::string out((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return out;
}

bool validate_utf8(std::string_view bytes, size_t* bad_offset) {
  size_t i = 0;
  const size_t n = bytes.size();
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(bytes[i]);
    size_t len;
    uint32_t cp;
    if (c < 0x80) {
      len = 1;
      cp = c;
    } else if ((c & 0xe0) == 0xc0) {
      len = 2;
      cp = c & 0x1f;
    } else if ((c & 0xf0) == 0xe0) {
      len = 3;
      cp = c & 0x0f;
    } else if ((c & 0xf8) == 0xf0) {
      len = 4;
      cp = c & 0x07;
    } else {
      if (bad_offset) *bad_offset = i;
      return false;
    }
    if (i + len > n) {
      if (bad_offset) *bad_offset = i;
      return false;
    }
    for (size_t j = 1; j < len; ++j) {
      const unsigned char cc = static_cast<unsigned char>(bytes[i + j]);
      if ((cc & 0xc0) != 0x80) {
        if (bad_offset) *bad_offset = i;  // report the sequence start
        return false;
      }
      cp = (cp << 6) | (cc & 0x3f);
    }
    // Overlong encodings, surrogates, and out-of-range values are invalid.
    const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
                          (len == 4 && cp < 0x10000);
    if (overlong || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) {
      if (bad_offset) *bad_offset = i;
      return false;
    }
    i += len;
  }
  return true;
}

uint32_t utf8_next(std::string_view s, size_t& i) {
  const unsigned char c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) {
    i += 1;
    return c;
  }
  if ((c & 0xe0) == 0xc0) {
    uint32_t cp = (static_cast<uint32_t>(c & 0x1f) << 6) |
                  (static_cast<unsigned char>(s[i + 1]) & 0x3f);
    i += 2;
    return cp;
  }
  if ((c & 0xf0) == 0xe0) {
    uint32_t cp = (static_cast<uint32_t>(c & 0x0f) << 12) |
                  ((static_cast<unsigned char>(s[i + 1]) & 0x3f) << 6) |
                  (static_cast<unsigned char>(s[i + 2]) & 0x3f);
    i += 3;
    return cp;
  }
  uint32_t cp = (static_cast<uint32_t>(c & 0x07) << 18) |
                ((static_cast<unsigned char>(s[i + 1]) & 0x3f) << 12) |
                ((static_cast<unsigned char>(s[i + 2]) & 0x3f) << 6) |
                (static_cast<unsigned char>(s[i + 3]) & 0x3f);
  i += 4;
  return cp;
}

void utf8_append(std::string& out, uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

}  // namespace babylm::io
