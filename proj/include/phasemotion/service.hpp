#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "phasemotion/pae.hpp"
#include "phasemotion/runtime.hpp"

namespace phasemotion {

// ---------------------------------------------------------------------------
// Wire format: one JSON object per line.
//
// client -> server
//   {"type":"play","motion":"dance3"}
//   {"type":"stop"}
//   {"type":"transition","target":"dance5","duration_s":0.5}
//   {"type":"freq_scale","value":1.25}
//   {"type":"mode","value":"replay"|"propagate"}
//   {"type":"list_motions"} | {"type":"get_config"} | {"type":"get_state"}
// server -> client
//   {"type":"frame","t":..,"q":[..],"phi":[..],"f":[..],"a":[..],"b":[..],
//    "motion":"..","transition":false,"dropped":0}
//   {"type":"ack","command":"transition","tick":123}
//   {"type":"error","message":"..."}
//   {"type":"motions"|"config"|"state", ...}

/// Throws InvalidArgument on unknown types or missing/ill-typed fields.
Command parse_command(const nlohmann::json& message);
nlohmann::json command_to_json(const Command& cmd);
const char* command_name(Command::Type type);

nlohmann::json frame_to_json(const Frame& frame, std::uint64_t dropped = 0);

/// Offline command script: one JSON command per line, each with an integer
/// "tick" (or "at" in seconds, converted with `period`).
std::vector<ScriptedCommand> parse_script(const std::string& text, double period);
std::vector<ScriptedCommand> load_script(const std::filesystem::path& path, double period);

// ---------------------------------------------------------------------------

/// Bounded per-client outbox. When full, the oldest frame is discarded and
/// counted.
class Outbox {
public:
    explicit Outbox(std::size_t capacity) : capacity_(capacity) {}

    /// Frames may be dropped; control replies never are.
    void push_frame(std::string line);
    void push_reply(std::string line);
    /// Blocks up to `timeout` for a message; nullopt on timeout or close.
    std::optional<std::string> pop(std::chrono::milliseconds timeout);
    void close();
    bool closed() const;
    std::uint64_t dropped() const;

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    struct Entry {
        std::string line;
        bool frame = false;
    };
    std::deque<Entry> queue_;
    std::size_t capacity_;  // frames only
    std::size_t frames_ = 0;
    std::uint64_t dropped_ = 0;
    bool closed_ = false;
};

using ClientId = std::uint64_t;

/// Transport-independent service core: a Player plus a command queue and a
/// registry of client outboxes. One thread calls tick(); any thread may call
/// the rest.
class ServiceSession {
public:
    ServiceSession(const Checkpoint& model, std::vector<MotionClip> motions, std::size_t outbox_capacity = 512);

    ClientId connect();
    void disconnect(ClientId id);
    std::shared_ptr<Outbox> outbox(ClientId id) const;

    /// Handles one inbound line: answers requests immediately, queues
    /// commands for the next tick, reports malformed input as an error line.
    void handle_line(ClientId from, const std::string& line);
    /// Queues a command; `from` receives the ack or error.
    void submit(const Command& cmd, std::optional<ClientId> from = std::nullopt);

    /// Applies queued commands, advances one period and fans the frame out.
    Frame tick();

    nlohmann::json motions_json() const;
    nlohmann::json config_json() const;
    nlohmann::json state_json() const;
    double period() const { return player_.period(); }

private:
    struct Pending {
        Command cmd;
        std::optional<ClientId> from;
    };
    void reply(std::optional<ClientId> to, const nlohmann::json& message);

    mutable std::mutex player_mu_;  // guards player_
    Player player_;
    std::mutex queue_mu_;
    std::vector<Pending> pending_;
    mutable std::mutex clients_mu_;
    std::map<ClientId, std::shared_ptr<Outbox>> clients_;
    ClientId next_id_ = 1;
    std::size_t outbox_capacity_;
};

/// Wall-clock service: a ticker thread at the model period, a TCP line
/// server for the duplex stream and, optionally, an HTTP front end exposing
/// GET /motions, /config, /state, /stream and POST /command.
class Service {
public:
    struct Options {
        std::string host = "127.0.0.1";
        int stream_port = 0;  // 0 picks a free port
        int http_port = -1;   // -1 disables HTTP, 0 picks a free port
    };

    Service(const Checkpoint& model, std::vector<MotionClip> motions, Options options);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    void start();
    void stop();
    int stream_port() const { return stream_port_; }
    int http_port() const { return http_port_; }
    ServiceSession& session() { return session_; }

private:
    void tick_loop();
    void accept_loop();
    void serve_client(int fd);

    ServiceSession session_;
    Options options_;
    std::atomic<bool> running_{false};
    int listen_fd_ = -1;
    int stream_port_ = 0;
    int http_port_ = -1;
    std::thread ticker_;
    std::thread acceptor_;
    std::mutex conn_mu_;
    std::vector<int> client_fds_;
    std::vector<std::thread> client_threads_;
    struct Http;
    std::unique_ptr<Http> http_;
};

}  // namespace phasemotion
