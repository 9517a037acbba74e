#include "panolab/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include "panolab/error.hpp"

namespace panolab {

namespace fs = std::filesystem;

namespace {

constexpr char magic[4] = {'P', '3', '6', '0'};
constexpr std::uint8_t version = 0x01;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

    std::size_t left() const noexcept { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) const
    {
        if (left() < n)
            throw IoError(IoError::Kind::truncated, std::string("P360 truncated while reading ") + what);
    }
    std::uint8_t u8(const char* what)
    {
        need(1, what);
        return bytes_[pos_++];
    }
    std::uint32_t u32(const char* what)
    {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    const std::uint8_t* take(std::size_t n, const char* what)
    {
        need(n, what);
        const std::uint8_t* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(IoError::Kind::open, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(IoError::Kind::open, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError(IoError::Kind::open, "write failed for " + path.string());
}

} // namespace

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& entries)
{
    std::vector<std::uint8_t> out(std::begin(magic), std::end(magic));
    out.push_back(version);
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const NamedTensor& e : entries) {
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        const Shape& s = e.value.shape();
        out.push_back(5);
        for (int v : {s.batch, s.channels, s.frames, s.height, s.width})
            put_u32(out, static_cast<std::uint32_t>(v));
        for (float v : e.value.data())
            put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

std::vector<NamedTensor> decode_tensors(const std::vector<std::uint8_t>& bytes)
{
    Reader r(bytes);
    const std::uint8_t* m = r.take(4, "magic");
    if (!std::equal(m, m + 4, magic))
        throw IoError(IoError::Kind::bad_magic, "not a P360 container (bad magic)");
    const std::uint8_t v = r.u8("version");
    if (v != version)
        throw IoError(IoError::Kind::bad_version, "unsupported P360 version " + std::to_string(v));
    const std::uint32_t count = r.u32("entry count");

    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = r.u32("name length");
        const std::uint8_t* name = r.take(len, "name");
        const int rank = r.u8("rank");
        if (rank > 5)
            throw IoError(IoError::Kind::parse, "P360 entry rank " + std::to_string(rank) + " exceeds 5");
        int ext[5] = {1, 1, 1, 1, 1};
        std::uint64_t total = 1;
        for (int k = 0; k < rank; ++k) {
            const std::uint32_t e = r.u32("extent");
            if (e == 0)
                throw IoError(IoError::Kind::parse, "P360 entry with a zero extent");
            if (e > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
                throw IoError(IoError::Kind::extent_overflow, "P360 extent " + std::to_string(e) + " too large");
            total *= e;
            if (total > (std::uint64_t{1} << 40))
                throw IoError(IoError::Kind::extent_overflow, "P360 entry extents overflow");
            ext[5 - rank + k] = static_cast<int>(e);
        }
        const std::uint8_t* payload = r.take(total * 4, "payload");
        std::vector<float> data(total);
        for (std::uint64_t j = 0; j < total; ++j) {
            std::uint32_t w = 0;
            for (int b = 0; b < 4; ++b)
                w |= static_cast<std::uint32_t>(payload[4 * j + b]) << (8 * b);
            data[j] = std::bit_cast<float>(w);
        }
        out.push_back({std::string(reinterpret_cast<const char*>(name), len),
                       VideoTensor(Shape{ext[0], ext[1], ext[2], ext[3], ext[4]}, std::move(data))});
    }
    return out;
}

void save_tensors(const fs::path& path, const std::vector<NamedTensor>& entries)
{
    write_file(path, encode_tensors(entries));
}

std::vector<NamedTensor> load_tensors(const fs::path& path) { return decode_tensors(read_file(path)); }

const VideoTensor& find_tensor(const std::vector<NamedTensor>& entries, const std::string& name)
{
    for (const NamedTensor& e : entries)
        if (e.name == name)
            return e.value;
    throw IoError(IoError::Kind::parse, "container has no entry named " + name);
}

std::vector<NamedTensor> param_entries(const ParamSet& params)
{
    std::vector<NamedTensor> out;
    for (const Parameter* p : params.all())
        out.push_back({p->name, p->value});
    return out;
}

std::size_t assign_params(ParamSet& params, const std::vector<NamedTensor>& entries)
{
    std::size_t n = 0;
    for (const NamedTensor& e : entries)
        if (Parameter* p = params.find(e.name)) {
            require_same_shape(p->value.shape(), e.value.shape(), e.name.c_str());
            p->value = e.value;
            ++n;
        }
    return n;
}

std::uint8_t to_byte(float v) noexcept
{
    const float c = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::floor(static_cast<double>(c) * 255.0 + 0.5));
}

void write_ppm(const fs::path& path, const VideoTensor& video, int frame)
{
    const Shape& s = video.shape();
    if (s.batch != 1 || (s.channels != 1 && s.channels != 3))
        throw ShapeError("PPM frames need batch 1 and 1 or 3 channels, got " + s.str());
    const std::string header = "P6\n" + std::to_string(s.width) + " " + std::to_string(s.height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x)
            for (int c = 0; c < 3; ++c)
                bytes.push_back(to_byte(video.at(0, s.channels == 3 ? c : 0, frame, y, x)));
    write_file(path, bytes);
}

std::vector<fs::path> write_frames_ppm(const VideoTensor& video, const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw IoError(IoError::Kind::open, "cannot create directory " + dir.string());
    std::vector<fs::path> out;
    for (int f = 0; f < video.shape().frames; ++f) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04d.ppm", f);
        out.push_back(dir / name);
        write_ppm(out.back(), video, f);
    }
    return out;
}

VideoTensor read_ppm(const fs::path& path)
{
    const std::vector<std::uint8_t> bytes = read_file(path);
    std::size_t pos = 0;
    auto token = [&]() {
        for (;;) {
            while (pos < bytes.size() && std::isspace(bytes[pos]))
                ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n')
                    ++pos;
                continue;
            }
            break;
        }
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos]))
            t.push_back(static_cast<char>(bytes[pos++]));
        return t;
    };
    auto number = [&](const char* what) {
        const std::string t = token();
        int v = 0;
        const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec != std::errc() || p != t.data() + t.size() || v < 1)
            throw IoError(IoError::Kind::parse, path.string() + ": bad PPM " + what);
        return v;
    };
    if (token() != "P6")
        throw IoError(IoError::Kind::bad_magic, path.string() + ": not a binary PPM");
    const int w = number("width");
    const int h = number("height");
    if (number("maxval") != 255)
        throw IoError(IoError::Kind::parse, path.string() + ": only maxval 255 is supported");
    ++pos; // single whitespace before the raster
    const std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (bytes.size() < pos + need)
        throw IoError(IoError::Kind::truncated, path.string() + ": PPM raster truncated");
    VideoTensor out(Shape{1, 3, 1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(0, c, 0, y, x) = static_cast<float>(bytes[pos++]) / 255.0f;
    return out;
}

VideoTensor read_frames_ppm(const fs::path& dir)
{
    std::vector<fs::path> files;
    if (fs::is_directory(dir))
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string n = e.path().filename().string();
            if (n.starts_with("frame_") && n.ends_with(".ppm"))
                files.push_back(e.path());
        }
    if (files.empty())
        throw IoError(IoError::Kind::open, "no frame_*.ppm files in " + dir.string());
    std::sort(files.begin(), files.end());
    std::vector<VideoTensor> frames;
    for (const auto& f : files)
        frames.push_back(read_ppm(f));
    const Shape s0 = frames[0].shape();
    VideoTensor out(Shape{1, 3, static_cast<int>(frames.size()), s0.height, s0.width});
    for (std::size_t f = 0; f < frames.size(); ++f) {
        if (!(frames[f].shape() == s0))
            throw ShapeError("frame " + files[f].string() + " has shape " + frames[f].shape().str());
        for (int c = 0; c < 3; ++c)
            std::copy_n(frames[f].plane(0, c, 0), s0.plane(), out.plane(0, c, static_cast<int>(f)));
    }
    return out;
}

namespace {

std::string num(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string triple(const std::array<double, 3>& v) { return num(v[0]) + "," + num(v[1]) + "," + num(v[2]); }

double parse_double(const std::string& key, std::string_view s)
{
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw IoError(IoError::Kind::parse, "scene key " + key + ": bad number '" + std::string(s) + "'");
    return v;
}

long long parse_int(const std::string& key, std::string_view s)
{
    long long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw IoError(IoError::Kind::parse, "scene key " + key + ": bad integer '" + std::string(s) + "'");
    return v;
}

std::array<double, 3> parse_triple(const std::string& key, const std::string& s)
{
    std::array<double, 3> out{};
    std::size_t start = 0;
    for (int i = 0; i < 3; ++i) {
        const std::size_t comma = s.find(',', start);
        if ((i < 2) != (comma != std::string::npos))
            throw IoError(IoError::Kind::parse, "scene key " + key + ": expected three comma-separated numbers");
        out[i] = parse_double(key, std::string_view(s).substr(start, comma == std::string::npos ? s.npos : comma - start));
        start = comma + 1;
    }
    return out;
}

std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos)
        return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

std::string format_scene(const SceneSpec& s)
{
    std::ostringstream out;
    out << "seed=" << s.seed << "\n"
        << "frames=" << s.frames << "\n"
        << "height=" << s.height << "\n"
        << "width=" << s.width << "\n"
        << "axis=" << triple(s.axis) << "\n"
        << "omega=" << num(s.omega) << "\n"
        << "blobs=" << s.blobs.size() << "\n";
    for (std::size_t i = 0; i < s.blobs.size(); ++i) {
        const std::string p = "blob." + std::to_string(i) + ".";
        out << p << "center=" << triple(s.blobs[i].center) << "\n"
            << p << "width=" << num(s.blobs[i].width) << "\n"
            << p << "color=" << triple(s.blobs[i].color) << "\n";
    }
    return out.str();
}

SceneSpec parse_scene(const std::string& text)
{
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw IoError(IoError::Kind::parse, "scene line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        if (!kv.emplace(key, trim(line.substr(eq + 1))).second)
            throw IoError(IoError::Kind::parse, "scene key " + key + " repeated");
    }

    auto take = [&](const std::string& key) {
        const auto it = kv.find(key);
        if (it == kv.end())
            throw IoError(IoError::Kind::parse, "scene key " + key + " missing");
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    auto take_int = [&](const std::string& key, long long lo, long long hi) {
        const long long v = parse_int(key, take(key));
        if (v < lo || v > hi)
            throw IoError(IoError::Kind::parse, "scene key " + key + " out of range");
        return v;
    };

    SceneSpec s;
    const std::string seed = take("seed");
    unsigned long long sv = 0;
    const auto [p, ec] = std::from_chars(seed.data(), seed.data() + seed.size(), sv);
    if (ec != std::errc() || p != seed.data() + seed.size())
        throw IoError(IoError::Kind::parse, "scene key seed: bad integer '" + seed + "'");
    s.seed = sv;
    s.frames = static_cast<int>(take_int("frames", 1, 1 << 20));
    s.height = static_cast<int>(take_int("height", 1, 1 << 15));
    s.width = static_cast<int>(take_int("width", 1, 1 << 16));
    s.axis = parse_triple("axis", take("axis"));
    s.omega = parse_double("omega", take("omega"));
    const long long n = take_int("blobs", 0, 1 << 16);
    for (long long i = 0; i < n; ++i) {
        const std::string pre = "blob." + std::to_string(i) + ".";
        Blob b;
        b.center = parse_triple(pre + "center", take(pre + "center"));
        b.width = parse_double(pre + "width", take(pre + "width"));
        b.color = parse_triple(pre + "color", take(pre + "color"));
        s.blobs.push_back(b);
    }
    if (!kv.empty())
        throw IoError(IoError::Kind::parse, "unknown scene key " + kv.begin()->first);
    try {
        validate_scene(s);
    } catch (const ArgumentError& e) {
        throw IoError(IoError::Kind::parse, std::string("invalid scene: ") + e.what());
    }
    return s;
}

void save_scene(const fs::path& path, const SceneSpec& spec)
{
    const std::string t = format_scene(spec);
    write_file(path, std::vector<std::uint8_t>(t.begin(), t.end()));
}

SceneSpec load_scene(const fs::path& path)
{
    const std::vector<std::uint8_t> b = read_file(path);
    return parse_scene(std::string(b.begin(), b.end()));
}

} // namespace panolab
