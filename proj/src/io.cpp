#include "pae/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "pae/rng.hpp"

namespace pae {

namespace {

constexpr char kMagic[4] = {'P', 'A', 'E', 'T'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

// Files are written and read on little-endian hosts; payload uses memcpy
// of native f32/f64 which are little-endian on every supported target.
void append_f32(std::string& out, float v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
}

void append_f64(std::string& out, double v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
}

}  // namespace

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
    std::string out;
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    out.push_back(static_cast<char>(dtype));
    if (t.rank() > 255) throw ConfigError("write_tensor: rank exceeds u8");
    out.push_back(static_cast<char>(t.rank()));
    for (int64_t i = 0; i < t.rank(); ++i) {
        int64_t d = t.dim(i);
        if (d > 0xffffffffLL) throw ConfigError("write_tensor: dimension exceeds u32");
        put_u32(out, static_cast<uint32_t>(d));
    }
    const int64_t n = t.numel();
    if (dtype == DType::f32) {
        out.reserve(out.size() + static_cast<size_t>(n) * 4);
        for (int64_t i = 0; i < n; ++i) append_f32(out, static_cast<float>(t[i]));
    } else {
        out.reserve(out.size() + static_cast<size_t>(n) * 8);
        for (int64_t i = 0; i < n; ++i) append_f64(out, t[i]);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("write_tensor: cannot open " + path.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("write_tensor: short write to " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("read_tensor: cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());

    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("read_tensor: bad magic at offset 0 in " + path.string() +
                          " (expected \"PAET\")");
    }
    if (bytes.size() < 8)
        throw FormatError("read_tensor: truncated header in " + path.string());

    const uint16_t version = get_u16(bytes.data() + 4);
    if (version != kVersion) {
        throw FormatError("read_tensor: unsupported version " + std::to_string(version) +
                          " at offset 4 in " + path.string());
    }
    const uint8_t dtype = bytes[6];
    if (dtype > 1) {
        throw FormatError("read_tensor: unknown dtype code " + std::to_string(dtype) +
                          " at offset 6 in " + path.string());
    }
    const uint8_t rank = bytes[7];
    const size_t dims_off = 8;
    if (bytes.size() < dims_off + 4u * rank)
        throw FormatError("read_tensor: truncated dims in " + path.string());

    std::vector<int64_t> shape(rank);
    for (int i = 0; i < rank; ++i)
        shape[static_cast<size_t>(i)] = get_u32(bytes.data() + dims_off + 4u * i);

    const int64_t n = Tensor::numel_of(shape);
    const size_t elem = dtype == 0 ? 4 : 8;
    const size_t payload_off = dims_off + 4u * rank;
    const size_t expected = static_cast<size_t>(n) * elem;
    const size_t actual = bytes.size() - payload_off;
    if (actual != expected) {
        std::ostringstream os;
        os << "read_tensor: payload size mismatch in " << path.string() << " (expected "
           << expected << " bytes, got " << actual << ")";
        throw FormatError(os.str());
    }

    Tensor t(shape);
    const unsigned char* p = bytes.data() + payload_off;
    if (dtype == 0) {
        for (int64_t i = 0; i < n; ++i) {
            float v;
            std::memcpy(&v, p + 4 * i, 4);
            t[i] = static_cast<double>(v);
        }
    } else {
        for (int64_t i = 0; i < n; ++i) {
            double v;
            std::memcpy(&v, p + 8 * i, 8);
            t[i] = v;
        }
    }
    return t;
}

std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

std::string file_content_hash(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("file_content_hash: cannot open " + path.string());
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (f) {
        f.read(buf, sizeof(buf));
        std::streamsize got = f.gcount();
        if (got > 0) h = fnv1a64(buf, static_cast<size_t>(got), h);
    }
    return hash_hex(h);
}

}  // namespace pae
