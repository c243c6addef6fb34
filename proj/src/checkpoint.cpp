#include "h2m/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "h2m/error.hpp"

namespace h2m {

namespace {

class Writer {
   public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

   private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
   public:
    explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_), in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

   private:
    void need(std::size_t n) const {
        if (pos_ + n > in_.size()) throw ValidationError("checkpoint truncated");
    }
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
        return v;
    }
    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& records) {
    Writer w;
    w.bytes("H2MC");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        if (r.name.size() > 0xFFFF) throw ContractError("checkpoint: name too long: " + r.name);
        const auto& shape = r.tensor.shape();
        if (shape.size() > 0xFF) throw ContractError("checkpoint: rank too large for " + r.name);
        w.u16(static_cast<std::uint16_t>(r.name.size()));
        w.bytes(r.name);
        w.u8(static_cast<std::uint8_t>(shape.size()));
        for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
        for (double v : r.tensor.data()) w.f64(v);
    }
    return w.take();
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    if (r.bytes(4) != "H2MC") throw ValidationError("checkpoint: bad magic");
    const auto version = r.u32();
    if (version != kCheckpointVersion) throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
    const auto count = r.u32();
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor nt;
        nt.name = r.bytes(r.u16());
        const auto rank = r.u8();
        Shape shape(rank);
        for (auto& d : shape) d = r.u32();
        std::vector<double> data(shape_numel(shape));
        for (auto& v : data) v = r.f64();
        nt.tensor = Tensor::from(std::move(shape), std::move(data));
        out.push_back(std::move(nt));
    }
    if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto bytes = encode_checkpoint(records);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write checkpoint " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("checkpoint not found: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

std::vector<NamedTensor> to_records(const ParamSet& params, const std::string& prefix) {
    std::vector<NamedTensor> out;
    for (const auto& [name, t] : params.items()) out.push_back({prefix + name, t.detach()});
    return out;
}

const NamedTensor* find_record(const std::vector<NamedTensor>& records, const std::string& name) {
    for (const auto& r : records)
        if (r.name == name) return &r;
    return nullptr;
}

void assign_from_records(ParamSet& params, const std::vector<NamedTensor>& records, const std::string& prefix) {
    for (const auto& [name, t] : params.items()) {
        const auto* rec = find_record(records, prefix + name);
        if (!rec) throw ValidationError("checkpoint is missing parameter " + prefix + name);
        if (rec->tensor.shape() != t.shape())
            throw ValidationError("checkpoint parameter " + prefix + name + " has shape " +
                                  shape_str(rec->tensor.shape()) + ", expected " + shape_str(t.shape()));
        auto dst = Tensor(t).mutable_data();
        const auto src = rec->tensor.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

void append_adam_records(std::vector<NamedTensor>& out, const ParamSet& params, const AdamState& state,
                         const std::string& prefix) {
    out.push_back({prefix + "step", Tensor::scalar(static_cast<double>(state.step))});
    if (state.m.empty()) return;
    const auto& items = params.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        out.push_back({prefix + "m." + items[i].first, Tensor::from(items[i].second.shape(), state.m[i])});
        out.push_back({prefix + "v." + items[i].first, Tensor::from(items[i].second.shape(), state.v[i])});
    }
}

AdamState adam_from_records(const ParamSet& params, const std::vector<NamedTensor>& records, const std::string& prefix) {
    AdamState st;
    const auto* step = find_record(records, prefix + "step");
    if (!step) throw ValidationError("checkpoint has no optimizer state");
    st.step = static_cast<std::uint64_t>(step->tensor.item());
    if (st.step == 0) return st;
    for (const auto& [name, t] : params.items()) {
        const auto* m = find_record(records, prefix + "m." + name);
        const auto* v = find_record(records, prefix + "v." + name);
        if (!m || !v) throw ValidationError("checkpoint optimizer state missing for " + name);
        st.m.emplace_back(m->tensor.data().begin(), m->tensor.data().end());
        st.v.emplace_back(v->tensor.data().begin(), v->tensor.data().end());
    }
    return st;
}

}  // namespace h2m
