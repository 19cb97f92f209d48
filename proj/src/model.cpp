#include "textlearn/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace textlearn {

void ModelConfig::validate() const {
    if (num_layers == 0) throw ValueError("ModelConfig: num_layers must be positive");
    if (hidden == 0 || num_heads == 0 || hidden % num_heads != 0) {
        throw ValueError("ModelConfig: hidden must be a positive multiple of num_heads");
    }
    if (ffn_dim == 0) throw ValueError("ModelConfig: ffn_dim must be positive");
    if (vocab_size <= Vocabulary::kNumSpecials) throw ValueError("ModelConfig: vocab_size too small");
    if (max_positions == 0) throw ValueError("ModelConfig: max_positions must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ValueError("ModelConfig: dropout must be in [0, 1)");
}

AttentionConfig ModelConfig::attention() const {
    AttentionConfig a;
    a.num_heads = num_heads;
    a.model_dim = hidden;
    a.variant = variant;
    a.window = window;
    a.global_positions = global_positions;
    a.causal = false;
    return a;
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_fields() const {
    auto num = [](std::size_t v) { return std::to_string(v); };
    std::string globals;
    for (std::size_t i = 0; i < global_positions.size(); ++i) {
        if (i) globals += ',';
        globals += std::to_string(global_positions[i]);
    }
    std::ostringstream drop;
    drop.precision(17);
    drop << dropout;
    return {
        {"num_layers", num(num_layers)},
        {"num_heads", num(num_heads)},
        {"hidden", num(hidden)},
        {"ffn_dim", num(ffn_dim)},
        {"vocab_size", num(vocab_size)},
        {"max_positions", num(max_positions)},
        {"variant", variant == AttentionVariant::kFull ? "full" : "sliding"},
        {"window", num(window)},
        {"globals", globals},
        {"dropout", drop.str()},
        {"activation", activation == Activation::kGelu ? "gelu" : "relu"},
    };
}

ModelConfig ModelConfig::from_fields(const std::vector<std::pair<std::string, std::string>>& fields) {
    ModelConfig c;
    for (const auto& [key, value] : fields) {
        if (key == "num_layers") c.num_layers = std::stoul(value);
        else if (key == "num_heads") c.num_heads = std::stoul(value);
        else if (key == "hidden") c.hidden = std::stoul(value);
        else if (key == "ffn_dim") c.ffn_dim = std::stoul(value);
        else if (key == "vocab_size") c.vocab_size = std::stoul(value);
        else if (key == "max_positions") c.max_positions = std::stoul(value);
        else if (key == "window") c.window = std::stoul(value);
        else if (key == "dropout") c.dropout = std::stod(value);
        else if (key == "variant") {
            if (value == "full") c.variant = AttentionVariant::kFull;
            else if (value == "sliding") c.variant = AttentionVariant::kSliding;
            else throw IoError("ModelConfig: unknown variant '" + value + "'");
        } else if (key == "activation") {
            if (value == "gelu") c.activation = Activation::kGelu;
            else if (value == "relu") c.activation = Activation::kRelu;
            else throw IoError("ModelConfig: unknown activation '" + value + "'");
        } else if (key == "globals") {
            c.global_positions.clear();
            std::stringstream ss(value);
            std::string part;
            while (std::getline(ss, part, ',')) {
                if (!part.empty()) c.global_positions.push_back(std::stoul(part));
            }
        } else {
            throw IoError("ModelConfig: unknown config field '" + key + "'");
        }
    }
    c.validate();
    return c;
}

namespace {

Tensor normal_init(std::vector<std::size_t> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (double& x : t.data()) x = rng.gaussian(0.0, stddev);
    return t;
}

}  // namespace

InputEmbeddings InputEmbeddings::init(const ModelConfig& config, Rng& rng, double init_std) {
    InputEmbeddings e;
    e.token = Parameter(normal_init({config.vocab_size, config.hidden}, rng, init_std));
    e.position = Parameter(normal_init({config.max_positions, config.hidden}, rng, init_std));
    e.segment = Parameter(normal_init({2, config.hidden}, rng, init_std));
    e.ln_gain = Parameter(Tensor::full({config.hidden}, 1.0));
    e.ln_bias = Parameter(Tensor({config.hidden}));
    return e;
}

void InputEmbeddings::collect(std::vector<NamedParam>& out) {
    out.push_back({"embeddings.token", &token});
    out.push_back({"embeddings.position", &position});
    out.push_back({"embeddings.segment", &segment});
    out.push_back({"embeddings.ln_gain", &ln_gain});
    out.push_back({"embeddings.ln_bias", &ln_bias});
}

PretrainHeads PretrainHeads::init(const ModelConfig& config, Rng& rng, double init_std) {
    PretrainHeads h;
    h.mlm_weight = Parameter(normal_init({config.hidden, config.vocab_size}, rng, init_std));
    h.mlm_bias = Parameter(Tensor({config.vocab_size}));
    h.nsp_weight = Parameter(normal_init({config.hidden, 2}, rng, init_std));
    h.nsp_bias = Parameter(Tensor({2}));
    return h;
}

void PretrainHeads::collect(std::vector<NamedParam>& out) {
    out.push_back({"heads.mlm_weight", &mlm_weight});
    out.push_back({"heads.mlm_bias", &mlm_bias});
    out.push_back({"heads.nsp_weight", &nsp_weight});
    out.push_back({"heads.nsp_bias", &nsp_bias});
}

ClassifierHead::ClassifierHead(std::size_t hidden, std::size_t categories, Rng& rng, double init_std)
    : weight(normal_init({hidden, categories}, rng, init_std)) {
    if (categories < 2) throw ValueError("ClassifierHead: need at least two categories");
}

MaskedSequence mask_tokens(const EncodedSequence& encoded, std::size_t vocab_size, Rng& rng,
                           const MaskingOptions& options) {
    if (options.rate < 0.0 || options.rate > 1.0) throw ValueError("mask_tokens: rate must be in [0, 1]");
    if (options.mask_share < 0.0 || options.random_share < 0.0 ||
        options.mask_share + options.random_share > 1.0 + 1e-12) {
        throw ValueError("mask_tokens: mask/random/unchanged shares must sum to 1");
    }
    if (vocab_size <= Vocabulary::kNumSpecials) throw ValueError("mask_tokens: vocabulary has no content ids");

    MaskedSequence out;
    out.encoded = encoded;
    out.mlm_targets.assign(encoded.max_len(), kIgnoreIndex);
    const std::size_t content_ids = vocab_size - Vocabulary::kNumSpecials;
    for (std::size_t i = 0; i < encoded.true_length; ++i) {
        const int original = encoded.token_ids[i];
        if (Vocabulary::is_special(original)) continue;  // never [CLS]/[SEP]/[PAD] or other reserved ids
        if (rng.uniform() >= options.rate) continue;
        out.mlm_targets[i] = original;
        ++out.num_selected;
        const double action = rng.uniform();
        if (action < options.mask_share) {
            out.encoded.token_ids[i] = Vocabulary::kMask;
        } else if (action < options.mask_share + options.random_share) {
            out.encoded.token_ids[i] =
                static_cast<int>(Vocabulary::kNumSpecials + rng.uniform_index(content_ids));
        }  // else: left unchanged, still predicted
    }
    return out;
}

std::vector<SegmentPair> make_nsp_pairs(const std::vector<std::vector<std::string>>& documents, Rng& rng,
                                        double negative_fraction) {
    if (negative_fraction < 0.0 || negative_fraction > 1.0) {
        throw ValueError("make_nsp_pairs: negative_fraction must be in [0, 1]");
    }
    std::size_t adjacent = 0;
    for (const auto& doc : documents) {
        if (doc.size() >= 2) adjacent += doc.size() - 1;
    }
    if (adjacent == 0) throw InputError("make_nsp_pairs: no document has two adjacent segments");
    if (negative_fraction > 0.0 && documents.size() < 2) {
        throw InputError("make_nsp_pairs: negatives need at least two documents");
    }

    std::vector<SegmentPair> pairs;
    pairs.reserve(adjacent);
    for (std::size_t d = 0; d < documents.size(); ++d) {
        const auto& doc = documents[d];
        for (std::size_t s = 0; s + 1 < doc.size(); ++s) {
            if (rng.uniform() < negative_fraction) {
                // a random segment from another document
                std::size_t other = rng.uniform_index(documents.size() - 1);
                if (other >= d) ++other;
                while (documents[other].empty()) {
                    other = rng.uniform_index(documents.size() - 1);
                    if (other >= d) ++other;
                }
                const auto& pool = documents[other];
                pairs.push_back({doc[s], pool[rng.uniform_index(pool.size())], kNotNext});
            } else {
                pairs.push_back({doc[s], doc[s + 1], kIsNext});
            }
        }
    }
    return pairs;
}

BertModel::BertModel(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(init_seed);
    embeddings = InputEmbeddings::init(config_, rng);
    layers.reserve(config_.num_layers);
    for (std::size_t l = 0; l < config_.num_layers; ++l) {
        layers.push_back(EncoderLayerParams::init(config_.hidden, config_.ffn_dim, rng));
    }
    heads = PretrainHeads::init(config_, rng);
}

Var BertModel::encode(Tape& tape, const EncodedSequence& seq, bool training, Rng& rng) {
    if (seq.max_len() > config_.max_positions) {
        throw ShapeError("BertModel::encode: sequence longer than max_positions");
    }
    Var tok = tape.embedding_lookup(tape.param(embeddings.token), seq.token_ids);
    Var pos = tape.embedding_lookup(tape.param(embeddings.position), seq.position_ids);
    Var seg = tape.embedding_lookup(tape.param(embeddings.segment), seq.segment_ids);
    Var summed = tape.add(tape.add(tok, pos), seg);
    Var normed = tape.layer_norm(summed, tape.param(embeddings.ln_gain), tape.param(embeddings.ln_bias));
    Var dropped = tape.dropout(normed, config_.dropout, training, rng);
    AttentionMask mask = build_attention_mask(seq, config_.attention());
    return encoder_stack(tape, dropped, layers, config_.attention(), &mask, config_.dropout, training, rng,
                         config_.activation);
}

BertModel::PretrainVars BertModel::forward_pretrain(Tape& tape, const EncodedSequence& corrupted, bool training,
                                                    Rng& rng) {
    Var hidden = encode(tape, corrupted, training, rng);
    PretrainVars out;
    out.mlm_logits = tape.add_row(tape.matmul(hidden, tape.param(heads.mlm_weight)), tape.param(heads.mlm_bias));
    Var cls = tape.select_rows(hidden, {0});
    out.nsp_logits = tape.add_row(tape.matmul(cls, tape.param(heads.nsp_weight)), tape.param(heads.nsp_bias));
    return out;
}

Var BertModel::class_logits(Tape& tape, const EncodedSequence& seq, ClassifierHead& head, bool training,
                            Rng& rng) {
    if (head.weight.value.rows() != config_.hidden) {
        throw ShapeError("class_logits: head hidden size does not match the model");
    }
    Var hidden = encode(tape, seq, training, rng);
    Var cls = tape.select_rows(hidden, {0});
    return tape.matmul(cls, tape.param(head.weight));
}

std::vector<double> BertModel::classify(const EncodedSequence& seq, ClassifierHead& head) {
    Tape tape;
    Rng rng(0);  // evaluation mode draws nothing
    Var probs = tape.softmax(class_logits(tape, seq, head, false, rng), 1);
    return tape.value(probs).data();
}

std::vector<NamedParam> BertModel::named_params() {
    std::vector<NamedParam> out;
    embeddings.collect(out);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].collect("layers." + std::to_string(l), out);
    }
    heads.collect(out);
    return out;
}

Var pretrain_loss(Tape& tape, const std::vector<Var>& mlm_logits, const std::vector<std::vector<int>>& mlm_targets,
                  Var nsp_logits, const std::vector<int>& nsp_labels) {
    if (mlm_logits.size() != mlm_targets.size()) {
        throw ShapeError("pretrain_loss: one target vector per logits matrix required");
    }
    std::size_t total_selected = 0;
    std::vector<std::size_t> counts(mlm_logits.size(), 0);
    for (std::size_t i = 0; i < mlm_targets.size(); ++i) {
        for (int t : mlm_targets[i]) {
            if (t != kIgnoreIndex) ++counts[i];
        }
        total_selected += counts[i];
    }
    if (total_selected == 0) {
        throw ContractError("pretrain_loss: no positions selected for prediction; skip this batch");
    }
    // Per-sequence means reweighted by their share of selected positions give
    // exactly the batch-wide average.
    Var mlm_total = tape.input(Tensor::scalar(0.0));
    for (std::size_t i = 0; i < mlm_logits.size(); ++i) {
        if (counts[i] == 0) continue;
        Var ce = tape.cross_entropy(mlm_logits[i], mlm_targets[i], kIgnoreIndex);
        mlm_total = tape.add(mlm_total, tape.scale(ce, static_cast<double>(counts[i]) /
                                                           static_cast<double>(total_selected)));
    }
    Var nsp_ce = tape.cross_entropy(nsp_logits, nsp_labels);
    return tape.add(mlm_total, nsp_ce);
}

// ---- checkpoint format ----

namespace {

constexpr const char* kCheckpointMagic = "textlearn-checkpoint v1";

void write_f64_le(std::ostream& out, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_f64_le(std::istream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    double x;
    std::memcpy(&x, &bits, sizeof(x));
    return x;
}

struct RawCheckpoint {
    ModelConfig config;
    std::optional<std::size_t> classifier_categories;
    std::vector<std::pair<std::string, Tensor>> params;
};

RawCheckpoint parse_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointMagic) {
        throw IoError("load_checkpoint: bad magic line in " + path);
    }

    RawCheckpoint raw;
    std::vector<std::pair<std::string, std::string>> config_fields;
    struct ManifestEntry {
        std::string name;
        std::vector<std::size_t> shape;
        std::size_t offset;
    };
    std::vector<ManifestEntry> manifest;
    std::size_t total_elements = 0;
    bool saw_data = false;

    while (std::getline(in, line)) {
        if (line.rfind("config.", 0) == 0) {
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) throw IoError("load_checkpoint: malformed config line '" + line + "'");
            config_fields.emplace_back(line.substr(7, eq - 7), line.substr(eq + 1));
        } else if (line.rfind("classifier.categories=", 0) == 0) {
            raw.classifier_categories = std::stoul(line.substr(22));
        } else if (line.rfind("param ", 0) == 0) {
            std::istringstream ss(line.substr(6));
            ManifestEntry entry;
            std::size_t rank = 0;
            if (!(ss >> entry.name >> rank)) throw IoError("load_checkpoint: malformed manifest line '" + line + "'");
            entry.shape.resize(rank);
            for (std::size_t i = 0; i < rank; ++i) {
                if (!(ss >> entry.shape[i])) throw IoError("load_checkpoint: malformed shape in '" + line + "'");
            }
            if (!(ss >> entry.offset)) throw IoError("load_checkpoint: missing offset in '" + line + "'");
            manifest.push_back(std::move(entry));
        } else if (line.rfind("data ", 0) == 0) {
            total_elements = std::stoul(line.substr(5));
            saw_data = true;
            break;
        } else if (!line.empty()) {
            throw IoError("load_checkpoint: unexpected header line '" + line + "'");
        }
    }
    if (!saw_data) throw IoError("load_checkpoint: missing data section in " + path);

    raw.config = ModelConfig::from_fields(config_fields);

    std::size_t expected = 0;
    for (const auto& entry : manifest) {
        std::size_t n = 1;
        for (std::size_t e : entry.shape) n *= e;
        if (entry.offset != expected) {
            throw IoError("load_checkpoint: manifest offset mismatch for field " + entry.name);
        }
        expected += n;
    }
    if (expected != total_elements) {
        throw IoError("load_checkpoint: data size disagrees with the manifest");
    }

    std::vector<double> data(total_elements);
    for (std::size_t i = 0; i < total_elements; ++i) {
        data[i] = read_f64_le(in);
        if (!in) throw IoError("load_checkpoint: truncated data section in " + path);
    }

    std::size_t off = 0;
    for (auto& entry : manifest) {
        std::size_t n = 1;
        for (std::size_t e : entry.shape) n *= e;
        raw.params.emplace_back(entry.name,
                                Tensor(entry.shape, std::vector<double>(data.begin() + off, data.begin() + off + n)));
        off += n;
    }
    return raw;
}

void apply_params(BertModel& model, const RawCheckpoint& raw) {
    std::map<std::string, const Tensor*> stored;
    for (const auto& [name, tensor] : raw.params) {
        if (name.rfind("classifier.", 0) == 0) continue;
        stored[name] = &tensor;
    }
    for (auto& np : model.named_params()) {
        auto it = stored.find(np.name);
        if (it == stored.end()) throw IoError("load_checkpoint: missing parameter field " + np.name);
        if (it->second->shape() != np.param->value.shape()) {
            throw IoError("load_checkpoint: shape mismatch for field " + np.name + ": stored " +
                          it->second->shape_string() + " vs model " + np.param->value.shape_string());
        }
        np.param->value = *it->second;
        np.param->zero_grad();
        stored.erase(it);
    }
    if (!stored.empty()) {
        throw IoError("load_checkpoint: unknown parameter field " + stored.begin()->first);
    }
}

}  // namespace

void save_checkpoint(BertModel& model, const std::string& path, ClassifierHead* head) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out << kCheckpointMagic << '\n';
    for (const auto& [key, value] : model.config().to_fields()) {
        out << "config." << key << '=' << value << '\n';
    }
    std::vector<NamedParam> params = model.named_params();
    ClassifierHead* saved_head = head;
    if (saved_head) {
        out << "classifier.categories=" << saved_head->categories() << '\n';
        params.push_back({"classifier.weight", &saved_head->weight});
    }
    std::size_t offset = 0;
    for (const auto& np : params) {
        out << "param " << np.name << ' ' << np.param->value.rank();
        for (std::size_t e : np.param->value.shape()) out << ' ' << e;
        out << ' ' << offset << '\n';
        offset += np.param->value.size();
    }
    out << "data " << offset << '\n';
    for (const auto& np : params) {
        for (double x : np.param->value.data()) write_f64_le(out, x);
    }
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

BertModel load_checkpoint(const std::string& path, std::optional<ClassifierHead>* head_out) {
    RawCheckpoint raw = parse_checkpoint(path);
    BertModel model(raw.config, 0);
    apply_params(model, raw);
    if (head_out) {
        head_out->reset();
        if (raw.classifier_categories) {
            for (const auto& [name, tensor] : raw.params) {
                if (name == "classifier.weight") {
                    Rng rng(0);
                    ClassifierHead head(raw.config.hidden, *raw.classifier_categories, rng);
                    head.weight.value = tensor;
                    head.weight.zero_grad();
                    *head_out = std::move(head);
                }
            }
            if (!*head_out) throw IoError("load_checkpoint: classifier.categories present but weight missing");
        }
    }
    return model;
}

void load_checkpoint_into(BertModel& model, const std::string& path) {
    RawCheckpoint raw = parse_checkpoint(path);
    const auto want = model.config().to_fields();
    const auto got = raw.config.to_fields();
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i].second != got[i].second) {
            throw IoError("load_checkpoint: config mismatch for field " + want[i].first + ": checkpoint has " +
                          got[i].second + ", model wants " + want[i].second);
        }
    }
    apply_params(model, raw);
}

}  // namespace textlearn
