#include "comrl/dataset_io.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "comrl/detail/bytes.hpp"

namespace comrl::core {

using detail::get_f64;
using detail::get_u64;
using detail::put_f64;
using detail::put_u64;

void write_dataset(const std::string& path, const OfflineTaskDataset& dataset,
                   const std::map<std::string, std::string>& metadata) {
    const std::uint64_t count = dataset.transitions.size();
    const std::uint64_t state_dim = dataset.state_dim();
    const std::uint64_t action_dim = dataset.action_dim();

    std::string buf;
    buf.reserve(32 + count * (2 * state_dim + action_dim + 2) * 8);
    put_u64(buf, static_cast<std::uint64_t>(static_cast<std::int64_t>(dataset.task_id)));
    put_u64(buf, state_dim);
    put_u64(buf, action_dim);
    put_u64(buf, count);

    for (const auto& tr : dataset.transitions) {
        if (tr.state.size() != state_dim || tr.next_state.size() != state_dim ||
            tr.action.size() != action_dim)
            throw std::invalid_argument("write_dataset: inhomogeneous dimensions");
        for (double x : tr.state) put_f64(buf, x);
        for (double x : tr.action) put_f64(buf, x);
        put_f64(buf, tr.reward);
        for (double x : tr.next_state) put_f64(buf, x);
        put_f64(buf, tr.done ? 1.0 : 0.0);
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("write_dataset: cannot open " + path);
    file.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!file) throw std::runtime_error("write_dataset: short write to " + path);

    std::ofstream meta(path + ".meta", std::ios::trunc);
    if (!meta) throw std::runtime_error("write_dataset: cannot open " + path + ".meta");
    for (const auto& [key, value] : metadata) meta << key << "=" << value << "\n";
}

OfflineTaskDataset read_dataset(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("read_dataset: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    if (buf.size() < 32) throw std::runtime_error("read_dataset: truncated header in " + path);

    OfflineTaskDataset ds;
    ds.task_id = static_cast<int>(static_cast<std::int64_t>(get_u64(buf.data())));
    const std::uint64_t state_dim = get_u64(buf.data() + 8);
    const std::uint64_t action_dim = get_u64(buf.data() + 16);
    const std::uint64_t count = get_u64(buf.data() + 24);

    const std::uint64_t row_width = (2 * state_dim + action_dim + 2) * 8;
    if (buf.size() != 32 + count * row_width)
        throw std::runtime_error("read_dataset: size mismatch in " + path);

    ds.transitions.reserve(count);
    const char* p = buf.data() + 32;
    for (std::uint64_t i = 0; i < count; ++i) {
        TransitionRecord tr;
        tr.task_id = ds.task_id;
        tr.state.resize(state_dim);
        for (auto& x : tr.state) { x = get_f64(p); p += 8; }
        tr.action.resize(action_dim);
        for (auto& x : tr.action) { x = get_f64(p); p += 8; }
        tr.reward = get_f64(p); p += 8;
        tr.next_state.resize(state_dim);
        for (auto& x : tr.next_state) { x = get_f64(p); p += 8; }
        tr.done = get_f64(p) != 0.0; p += 8;
        ds.transitions.push_back(std::move(tr));
    }
    return ds;
}

std::map<std::string, std::string> read_dataset_metadata(const std::string& path) {
    std::ifstream meta(path + ".meta");
    if (!meta) throw std::runtime_error("read_dataset_metadata: cannot open " + path + ".meta");
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(meta, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

}  // namespace comrl::core
