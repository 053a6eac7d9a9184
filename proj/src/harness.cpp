#include "comrl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "comrl/dataset_io.hpp"

namespace comrl::harness {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_widths(const std::vector<int>& widths) {
    std::string out;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(widths[i]);
    }
    return out;
}

std::vector<int> parse_widths(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty()) continue;
        out.push_back(std::stoi(part));
    }
    if (out.empty()) throw std::invalid_argument("parse_widths: empty width list");
    return out;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

TrainingConfig TrainingConfig::with_preset(const std::string& name) {
    TrainingConfig cfg;
    cfg.preset = name;
    if (name == "desk") {
        return cfg;  // struct defaults are the desk preset
    }
    if (name == "paper") {
        cfg.actor_widths = {256, 256};
        cfg.critic_widths = {256, 256};
        cfg.encoder_widths = {64, 64};
        cfg.learning_rate = 4e-3;
        cfg.encoder_learning_rate = 4e-3;
        return cfg;
    }
    throw std::invalid_argument("TrainingConfig: unknown preset '" + name + "'");
}

void TrainingConfig::set_key(const std::string& key, const std::string& value) {
    if (key == "preset") {
        // handled by the caller before other keys
        preset = value;
    } else if (key == "family") {
        family = envlab::family_from_name(value);
    } else if (key == "n_train_tasks") {
        n_train_tasks = std::stoi(value);
    } else if (key == "n_test_tasks") {
        n_test_tasks = std::stoi(value);
    } else if (key == "task_batch_size") {
        task_batch_size = std::stoi(value);
    } else if (key == "rl_batch_size") {
        rl_batch_size = std::stoi(value);
    } else if (key == "context_trajectories") {
        context_trajectories = std::stoi(value);
    } else if (key == "update_frequency") {
        update_frequency = std::stoi(value);
    } else if (key == "loss_kind") {
        loss_kind = taskenc::loss_kind_from_name(value);
    } else if (key == "learning_rate") {
        learning_rate = std::stod(value);
    } else if (key == "encoder_learning_rate") {
        encoder_learning_rate = std::stod(value);
    } else if (key == "total_steps") {
        total_steps = std::stol(value);
    } else if (key == "eval_interval") {
        eval_interval = std::stol(value);
    } else if (key == "steps_per_iteration") {
        steps_per_iteration = std::stol(value);
    } else if (key == "seed") {
        seed = std::stoull(value);
    } else if (key == "out_dir") {
        out_dir = value;
    } else if (key == "data_dir") {
        data_dir = value;
    } else if (key == "run_label") {
        run_label = value;
    } else if (key == "d_z") {
        d_z = std::stoi(value);
    } else if (key == "actor_widths") {
        actor_widths = parse_widths(value);
    } else if (key == "critic_widths") {
        critic_widths = parse_widths(value);
    } else if (key == "encoder_widths") {
        encoder_widths = parse_widths(value);
    } else if (key == "alpha_kl") {
        alpha_kl = std::stod(value);
    } else if (key == "tau") {
        tau = std::stod(value);
    } else if (key == "behavior_clone_steps") {
        behavior_clone_steps = std::stol(value);
    } else if (key == "eval_episodes") {
        eval_episodes = std::stoi(value);
    } else if (key == "focal_beta") {
        focal_beta = std::stod(value);
    } else if (key == "recon_weight") {
        recon_weight = std::stod(value);
    } else if (key == "transitions_per_task") {
        transitions_per_task = std::stoi(value);
    } else if (key == "noise_scale") {
        noise_scale = std::stod(value);
    } else if (key == "behavior_kind") {
        behavior_kind = value;
    } else if (key == "mixture_weight") {
        mixture_weight = std::stod(value);
    } else if (key == "probe_contexts") {
        probe_contexts = std::stoi(value);
    } else if (key == "holdout_trajectories") {
        holdout_trajectories = std::stoi(value);
    } else if (key == "bound_latent") {
        bound_latent = value == "1" || value == "true";
    } else {
        throw std::invalid_argument("TrainingConfig: unknown key '" + key + "'");
    }
}

TrainingConfig TrainingConfig::from_file(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw std::runtime_error("TrainingConfig::from_file: cannot open " + path);
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string preset_name = "desk";
    std::string line;
    while (std::getline(file, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == '[') continue;  // sections are cosmetic
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("TrainingConfig::from_file: bad line '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key == "preset")
            preset_name = value;
        else
            pairs.emplace_back(key, value);
    }
    TrainingConfig cfg = with_preset(preset_name);
    for (const auto& [key, value] : pairs) cfg.set_key(key, value);
    return cfg;
}

void TrainingConfig::validate() const {
    if (n_train_tasks < 1 || n_test_tasks < 1)
        throw std::invalid_argument("TrainingConfig: task counts must be >= 1");
    if (task_batch_size < 1 || rl_batch_size < 1)
        throw std::invalid_argument("TrainingConfig: batch sizes must be >= 1");
    if (context_trajectories != 1)
        throw std::invalid_argument("TrainingConfig: context size is 1 trajectory");
    if (update_frequency < 1)
        throw std::invalid_argument("TrainingConfig: update_frequency must be >= 1");
    if (total_steps < 0) throw std::invalid_argument("TrainingConfig: total_steps must be >= 0");
    if (steps_per_iteration < 1)
        throw std::invalid_argument("TrainingConfig: steps_per_iteration must be >= 1");
    if (holdout_trajectories < 1)
        throw std::invalid_argument("TrainingConfig: holdout_trajectories must be >= 1");
    if (probe_contexts < 1)
        throw std::invalid_argument("TrainingConfig: probe_contexts must be >= 1");
    if (behavior_kind != "noisy_expert" && behavior_kind != "uniform_random" &&
        behavior_kind != "mixture")
        throw std::invalid_argument("TrainingConfig: unknown behavior_kind");
}

std::string TrainingConfig::canonical_text() const {
    std::ostringstream out;
    out << "preset=" << preset << "\n";
    out << "family=" << envlab::family_name(family) << "\n";
    out << "n_train_tasks=" << n_train_tasks << "\n";
    out << "n_test_tasks=" << n_test_tasks << "\n";
    out << "task_batch_size=" << task_batch_size << "\n";
    out << "rl_batch_size=" << rl_batch_size << "\n";
    out << "context_trajectories=" << context_trajectories << "\n";
    out << "update_frequency=" << update_frequency << "\n";
    out << "loss_kind=" << taskenc::loss_kind_name(loss_kind) << "\n";
    out << "learning_rate=" << fmt_double(learning_rate) << "\n";
    out << "encoder_learning_rate=" << fmt_double(encoder_learning_rate) << "\n";
    out << "total_steps=" << total_steps << "\n";
    out << "eval_interval=" << eval_interval << "\n";
    out << "steps_per_iteration=" << steps_per_iteration << "\n";
    out << "seed=" << seed << "\n";
    out << "run_label=" << run_label << "\n";
    out << "d_z=" << d_z << "\n";
    out << "actor_widths=" << fmt_widths(actor_widths) << "\n";
    out << "critic_widths=" << fmt_widths(critic_widths) << "\n";
    out << "encoder_widths=" << fmt_widths(encoder_widths) << "\n";
    out << "alpha_kl=" << fmt_double(alpha_kl) << "\n";
    out << "tau=" << fmt_double(tau) << "\n";
    out << "behavior_clone_steps=" << behavior_clone_steps << "\n";
    out << "eval_episodes=" << eval_episodes << "\n";
    out << "focal_beta=" << fmt_double(focal_beta) << "\n";
    out << "recon_weight=" << fmt_double(recon_weight) << "\n";
    out << "transitions_per_task=" << transitions_per_task << "\n";
    out << "noise_scale=" << fmt_double(noise_scale) << "\n";
    out << "behavior_kind=" << behavior_kind << "\n";
    out << "mixture_weight=" << fmt_double(mixture_weight) << "\n";
    out << "probe_contexts=" << probe_contexts << "\n";
    out << "holdout_trajectories=" << holdout_trajectories << "\n";
    out << "bound_latent=" << (bound_latent ? 1 : 0) << "\n";
    return out.str();
}

std::string TrainingConfig::digest() const {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(canonical_text())));
    return buf;
}

taskenc::EncoderConfig TrainingConfig::encoder_config() const {
    taskenc::EncoderConfig enc;
    enc.d_z = d_z;
    enc.hidden_widths = encoder_widths;
    enc.decoder_hidden = encoder_widths;
    enc.loss_kind = loss_kind;
    enc.update_frequency = update_frequency;
    enc.focal_beta = focal_beta;
    enc.recon_weight = recon_weight;
    enc.bound_latent = bound_latent;
    return enc;
}

void save_tasks(const std::string& path, const std::vector<envlab::TaskSpec>& tasks) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw std::runtime_error("save_tasks: cannot open " + path);
    file << "task_id,family,horizon,gamma,goal\n";
    for (const auto& t : tasks) {
        file << t.task_id << "," << envlab::family_name(t.family) << "," << t.horizon << ","
             << fmt_double(t.gamma) << ",";
        for (std::size_t i = 0; i < t.goal_or_direction.size(); ++i) {
            if (i) file << ";";
            file << fmt_double(t.goal_or_direction[i]);
        }
        file << "\n";
    }
}

std::vector<envlab::TaskSpec> load_tasks(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw std::runtime_error("load_tasks: cannot open " + path);
    std::vector<envlab::TaskSpec> tasks;
    std::string line;
    std::getline(file, line);  // header
    while (std::getline(file, line)) {
        if (trim(line).empty()) continue;
        std::stringstream ss(line);
        std::string field;
        envlab::TaskSpec t;
        std::getline(ss, field, ',');
        t.task_id = std::stoi(field);
        std::getline(ss, field, ',');
        t.family = envlab::family_from_name(field);
        std::getline(ss, field, ',');
        t.horizon = std::stoi(field);
        std::getline(ss, field, ',');
        t.gamma = std::stod(field);
        std::getline(ss, field, ',');
        std::stringstream gs(field);
        std::string g;
        while (std::getline(gs, g, ';')) t.goal_or_direction.push_back(std::stod(g));
        tasks.push_back(std::move(t));
    }
    return tasks;
}

std::vector<envlab::TaskSpec> gen_datasets(const TrainingConfig& config) {
    config.validate();
    namespace fs = std::filesystem;
    fs::create_directories(config.data_dir);

    const std::vector<envlab::TaskSpec> tasks =
        envlab::make_task_family(config.family, config.n_train_tasks, config.n_test_tasks,
                                 config.seed);

    envlab::BehaviorPolicySpec policy;
    policy.noise_scale = config.noise_scale;
    policy.mixture_weight = config.mixture_weight;
    if (config.behavior_kind == "noisy_expert")
        policy.kind = envlab::BehaviorKind::noisy_expert;
    else if (config.behavior_kind == "uniform_random")
        policy.kind = envlab::BehaviorKind::uniform_random;
    else
        policy.kind = envlab::BehaviorKind::mixture;

    for (const auto& task : tasks) {
        const core::OfflineTaskDataset ds =
            envlab::rollout_behavior(task, policy, config.transitions_per_task, config.seed);
        const core::ValidationReport report = core::validate_dataset(ds);
        if (!report.ok())
            throw std::runtime_error("gen_datasets: generated dataset failed validation for task " +
                                     std::to_string(task.task_id));
        char name[64];
        std::snprintf(name, sizeof(name), "task_%03d.bin", task.task_id);
        std::map<std::string, std::string> meta;
        meta["family"] = envlab::family_name(task.family);
        meta["seed"] = std::to_string(config.seed);
        meta["task_id"] = std::to_string(task.task_id);
        meta["behavior_kind"] = config.behavior_kind;
        meta["noise_scale"] = fmt_double(config.noise_scale);
        meta["mixture_weight"] = fmt_double(config.mixture_weight);
        meta["transitions"] = std::to_string(config.transitions_per_task);
        core::write_dataset((fs::path(config.data_dir) / name).string(), ds, meta);
    }
    save_tasks((fs::path(config.data_dir) / "tasks.txt").string(), tasks);
    return tasks;
}

}  // namespace comrl::harness
