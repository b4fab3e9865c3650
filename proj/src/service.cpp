#include "phasemotion/service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "phasemotion/error.hpp"

namespace phasemotion {

namespace {

using nlohmann::json;

const json& require(const json& message, const char* key) {
    if (!message.contains(key)) throw InvalidArgument(std::string("command is missing '") + key + "'");
    return message.at(key);
}

double require_number(const json& message, const char* key) {
    const auto& v = require(message, key);
    if (!v.is_number()) throw InvalidArgument(std::string("'") + key + "' must be a number");
    return v.get<double>();
}

std::string require_string(const json& message, const char* key) {
    const auto& v = require(message, key);
    if (!v.is_string()) throw InvalidArgument(std::string("'") + key + "' must be a string");
    return v.get<std::string>();
}

json latent_arrays(json j, const LatentState& latent) {
    std::vector<double> f, a, b;
    for (const auto& th : latent.theta) {
        f.push_back(th.f);
        a.push_back(th.a);
        b.push_back(th.b);
    }
    j["phi"] = latent.phi;
    j["f"] = f;
    j["a"] = a;
    j["b"] = b;
    return j;
}

bool send_all(int fd, const std::string& data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n <= 0) return false;
        sent += static_cast<std::size_t>(n);
    }
    return true;
}

}  // namespace

const char* command_name(Command::Type type) {
    switch (type) {
        case Command::Type::Play: return "play";
        case Command::Type::Stop: return "stop";
        case Command::Type::Transition: return "transition";
        case Command::Type::FreqScale: return "freq_scale";
        case Command::Type::Mode: return "mode";
    }
    return "unknown";
}

Command parse_command(const json& message) {
    if (!message.is_object()) throw InvalidArgument("command must be a JSON object");
    const std::string type = require_string(message, "type");
    Command cmd;
    if (type == "play") {
        cmd.type = Command::Type::Play;
        cmd.motion = require_string(message, "motion");
    } else if (type == "stop") {
        cmd.type = Command::Type::Stop;
    } else if (type == "transition") {
        cmd.type = Command::Type::Transition;
        cmd.motion = require_string(message, "target");
        if (message.contains("duration_s")) cmd.duration_s = require_number(message, "duration_s");
    } else if (type == "freq_scale") {
        cmd.type = Command::Type::FreqScale;
        cmd.value = require_number(message, "value");
    } else if (type == "mode") {
        cmd.type = Command::Type::Mode;
        const std::string mode = require_string(message, "value");
        if (mode == "replay")
            cmd.mode = PlaybackMode::ReplayEncoded;
        else if (mode == "propagate")
            cmd.mode = PlaybackMode::PropagateLatent;
        else
            throw InvalidArgument("mode must be 'replay' or 'propagate'");
    } else {
        throw InvalidArgument("unknown command type '" + type + "'");
    }
    return cmd;
}

json command_to_json(const Command& cmd) {
    json j{{"type", command_name(cmd.type)}};
    switch (cmd.type) {
        case Command::Type::Play: j["motion"] = cmd.motion; break;
        case Command::Type::Transition:
            j["target"] = cmd.motion;
            j["duration_s"] = cmd.duration_s;
            break;
        case Command::Type::FreqScale: j["value"] = cmd.value; break;
        case Command::Type::Mode:
            j["value"] = cmd.mode == PlaybackMode::ReplayEncoded ? "replay" : "propagate";
            break;
        case Command::Type::Stop: break;
    }
    return j;
}

json frame_to_json(const Frame& frame, std::uint64_t dropped) {
    json j{{"type", "frame"},           {"t", frame.t}, {"q", frame.q}, {"motion", frame.motion},
           {"transition", frame.in_transition}, {"dropped", dropped}};
    return latent_arrays(std::move(j), frame.latent);
}

std::vector<ScriptedCommand> parse_script(const std::string& text, double period) {
    std::vector<ScriptedCommand> script;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos || line.front() == '#') continue;
        try {
            const json j = json::parse(line);
            ScriptedCommand sc;
            if (j.contains("tick"))
                sc.tick = j.at("tick").get<std::size_t>();
            else if (j.contains("at"))
                sc.tick = static_cast<std::size_t>(std::llround(j.at("at").get<double>() / period));
            else
                throw InvalidArgument("missing 'tick' or 'at'");
            sc.command = parse_command(j);
            script.push_back(std::move(sc));
        } catch (const json::exception& e) {
            throw InvalidArgument("script line " + std::to_string(lineno) + ": " + e.what());
        } catch (const InvalidArgument& e) {
            throw InvalidArgument("script line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    std::stable_sort(script.begin(), script.end(), [](const auto& a, const auto& b) { return a.tick < b.tick; });
    return script;
}

std::vector<ScriptedCommand> load_script(const std::filesystem::path& path, double period) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open script: " + path.string());
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_script(buf.str(), period);
}

// ---------------------------------------------------------------------------

void Outbox::push_frame(std::string line) {
    {
        std::lock_guard lock(mu_);
        if (closed_) return;
        if (frames_ >= capacity_) {
            const auto oldest = std::find_if(queue_.begin(), queue_.end(), [](const Entry& e) { return e.frame; });
            if (oldest != queue_.end()) {
                queue_.erase(oldest);
                --frames_;
                ++dropped_;
            }
        }
        if (frames_ < capacity_) {
            queue_.push_back({std::move(line), true});
            ++frames_;
        } else {
            ++dropped_;
        }
    }
    cv_.notify_one();
}

void Outbox::push_reply(std::string line) {
    {
        std::lock_guard lock(mu_);
        if (closed_) return;
        queue_.push_back({std::move(line), false});
    }
    cv_.notify_one();
}

std::optional<std::string> Outbox::pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || !queue_.empty(); });
    if (queue_.empty()) return std::nullopt;
    Entry e = std::move(queue_.front());
    queue_.pop_front();
    if (e.frame) --frames_;
    return std::move(e.line);
}

void Outbox::close() {
    {
        std::lock_guard lock(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

bool Outbox::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

std::uint64_t Outbox::dropped() const {
    std::lock_guard lock(mu_);
    return dropped_;
}

// ---------------------------------------------------------------------------

ServiceSession::ServiceSession(const Checkpoint& model, std::vector<MotionClip> motions, std::size_t outbox_capacity)
    : player_(model, std::move(motions)), outbox_capacity_(outbox_capacity) {}

ClientId ServiceSession::connect() {
    std::lock_guard lock(clients_mu_);
    const ClientId id = next_id_++;
    clients_[id] = std::make_shared<Outbox>(outbox_capacity_);
    return id;
}

void ServiceSession::disconnect(ClientId id) {
    std::shared_ptr<Outbox> box;
    {
        std::lock_guard lock(clients_mu_);
        const auto it = clients_.find(id);
        if (it == clients_.end()) return;
        box = it->second;
        clients_.erase(it);
    }
    box->close();
}

std::shared_ptr<Outbox> ServiceSession::outbox(ClientId id) const {
    std::lock_guard lock(clients_mu_);
    const auto it = clients_.find(id);
    return it == clients_.end() ? nullptr : it->second;
}

void ServiceSession::reply(std::optional<ClientId> to, const json& message) {
    if (!to) return;
    if (auto box = outbox(*to)) box->push_reply(message.dump());
}

void ServiceSession::handle_line(ClientId from, const std::string& line) {
    json message;
    try {
        message = json::parse(line);
    } catch (const json::exception&) {
        reply(from, {{"type", "error"}, {"message", "malformed JSON"}});
        return;
    }
    const std::string type = message.is_object() && message.contains("type") && message["type"].is_string()
                                 ? message["type"].get<std::string>()
                                 : std::string{};
    if (type == "list_motions") return reply(from, motions_json());
    if (type == "get_config") return reply(from, config_json());
    if (type == "get_state") return reply(from, state_json());
    try {
        submit(parse_command(message), from);
    } catch (const InvalidArgument& e) {
        reply(from, {{"type", "error"}, {"message", e.what()}});
    }
}

void ServiceSession::submit(const Command& cmd, std::optional<ClientId> from) {
    std::lock_guard lock(queue_mu_);
    pending_.push_back({cmd, from});
}

Frame ServiceSession::tick() {
    std::vector<Pending> batch;
    {
        std::lock_guard lock(queue_mu_);
        batch.swap(pending_);
    }
    Frame frame;
    std::vector<std::pair<std::optional<ClientId>, json>> replies;
    {
        std::lock_guard lock(player_mu_);
        for (const auto& p : batch) {
            try {
                player_.apply(p.cmd);
                replies.emplace_back(p.from, json{{"type", "ack"},
                                                  {"command", command_name(p.cmd.type)},
                                                  {"tick", player_.state().tick}});
            } catch (const InvalidArgument& e) {
                replies.emplace_back(p.from, json{{"type", "error"}, {"message", e.what()}});
            }
        }
        frame = player_.tick();
    }
    for (const auto& [to, message] : replies) reply(to, message);

    std::vector<std::shared_ptr<Outbox>> boxes;
    {
        std::lock_guard lock(clients_mu_);
        for (const auto& [id, box] : clients_) boxes.push_back(box);
    }
    for (const auto& box : boxes) box->push_frame(frame_to_json(frame, box->dropped()).dump());
    return frame;
}

json ServiceSession::motions_json() const {
    std::lock_guard lock(player_mu_);
    json list = json::array();
    for (const auto& clip : player_.motions())
        list.push_back({{"name", clip.name},
                        {"base_motion_id", clip.base_motion_id},
                        {"freq_factor", clip.freq_factor},
                        {"frames", clip.frames()}});
    return {{"type", "motions"}, {"motions", list}};
}

json ServiceSession::config_json() const {
    std::lock_guard lock(player_mu_);
    const auto& c = player_.model().config;
    return {{"type", "config"}, {"d", c.d},           {"c", c.c},          {"H", c.H},
            {"dt", c.dt},       {"hidden", c.hidden}, {"kernel", c.kernel}, {"N", c.N}};
}

json ServiceSession::state_json() const {
    std::lock_guard lock(player_mu_);
    const auto& s = player_.state();
    json j{{"type", "state"},
           {"tick", s.tick},
           {"t", static_cast<double>(s.tick) * player_.period()},
           {"freq_scale", s.freq_scale},
           {"mode", s.mode == PlaybackMode::ReplayEncoded ? "replay" : "propagate"},
           {"playing", s.source.has_value()},
           {"transition", s.transition.has_value()}};
    if (s.source) j["motion"] = player_.motions()[s.source->clip].name;
    if (s.incoming) j["target"] = player_.motions()[s.incoming->clip].name;
    return latent_arrays(std::move(j), s.latent);
}

// ---------------------------------------------------------------------------

struct Service::Http {
    httplib::Server server;
    std::thread thread;
};

Service::Service(const Checkpoint& model, std::vector<MotionClip> motions, Options options)
    : session_(model, std::move(motions)), options_(std::move(options)) {}

Service::~Service() { stop(); }

void Service::start() {
    if (running_) return;
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw IoError("socket() failed");
    const int yes = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(options_.stream_port));
    if (::inet_pton(AF_INET, options_.host.c_str(), &addr.sin_addr) != 1)
        throw InvalidArgument("bad host address '" + options_.host + "'");
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd_, 8) != 0) {
        ::close(listen_fd_);
        throw IoError("cannot listen on " + options_.host + ":" + std::to_string(options_.stream_port));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    stream_port_ = ntohs(addr.sin_port);

    if (options_.http_port >= 0) {
        http_ = std::make_unique<Http>();
        auto& srv = http_->server;
        srv.Get("/motions", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(session_.motions_json().dump(), "application/json");
        });
        srv.Get("/config", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(session_.config_json().dump(), "application/json");
        });
        srv.Get("/state", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(session_.state_json().dump(), "application/json");
        });
        srv.Post("/command", [this](const httplib::Request& req, httplib::Response& res) {
            try {
                session_.submit(parse_command(json::parse(req.body)));
                res.status = 202;
                res.set_content(R"({"type":"queued"})", "application/json");
            } catch (const std::exception& e) {
                res.status = 400;
                res.set_content(json{{"type", "error"}, {"message", e.what()}}.dump(), "application/json");
            }
        });
        srv.Get("/stream", [this](const httplib::Request&, httplib::Response& res) {
            const ClientId id = session_.connect();
            res.set_chunked_content_provider(
                "application/x-ndjson",
                [this, id](std::size_t, httplib::DataSink& sink) {
                    auto box = session_.outbox(id);
                    if (!box || !running_) return false;
                    while (auto line = box->pop(std::chrono::milliseconds(50))) {
                        *line += '\n';
                        if (!sink.write(line->data(), line->size())) return false;
                    }
                    return running_.load();
                },
                [this, id](bool) { session_.disconnect(id); });
        });
        http_port_ = options_.http_port == 0 ? srv.bind_to_any_port(options_.host)
                                             : (srv.bind_to_port(options_.host, options_.http_port) ? options_.http_port : -1);
        if (http_port_ < 0) throw IoError("cannot bind HTTP port on " + options_.host);
        http_->thread = std::thread([this] { http_->server.listen_after_bind(); });
    }

    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
    ticker_ = std::thread([this] { tick_loop(); });
}

void Service::stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    {
        std::lock_guard lock(conn_mu_);
        for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : client_threads_)
        if (t.joinable()) t.join();
    if (ticker_.joinable()) ticker_.join();
    if (http_) {
        http_->server.stop();
        if (http_->thread.joinable()) http_->thread.join();
    }
}

void Service::tick_loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(session_.period()));
    auto next = clock::now();
    while (running_) {
        session_.tick();
        next += period;
        std::this_thread::sleep_until(next);
    }
}

void Service::accept_loop() {
    while (running_) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (!running_) break;
            continue;
        }
        std::lock_guard lock(conn_mu_);
        client_fds_.push_back(fd);
        client_threads_.emplace_back([this, fd] { serve_client(fd); });
    }
}

void Service::serve_client(int fd) {
    const ClientId id = session_.connect();
    auto box = session_.outbox(id);
    std::thread writer([this, fd, box] {
        while (running_ && !box->closed()) {
            if (auto line = box->pop(std::chrono::milliseconds(50))) {
                *line += '\n';
                if (!send_all(fd, *line)) break;
            }
        }
    });

    std::string buffer;
    char chunk[4096];
    while (running_) {
        const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0) break;
        buffer.append(chunk, static_cast<std::size_t>(n));
        std::size_t nl;
        while ((nl = buffer.find('\n')) != std::string::npos) {
            std::string line = buffer.substr(0, nl);
            buffer.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) session_.handle_line(id, line);
        }
    }
    session_.disconnect(id);
    writer.join();
    {
        std::lock_guard lock(conn_mu_);
        std::erase(client_fds_, fd);
    }
    ::close(fd);
}

}  // namespace phasemotion
