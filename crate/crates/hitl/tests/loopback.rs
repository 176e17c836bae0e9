use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use prosocial_core::simulation::{generate_headon, HumanModel, PolicySpec, Scenario};
use prosocial_hitl::protocol::{ServerMsg, KEY_LEFT};
use prosocial_hitl::{bind, replay, Recording, ServerOptions};
use tokio_tungstenite::tungstenite::Message;

fn scenario() -> Scenario {
    let mut sc = generate_headon(3, -0.2, &HumanModel::ibr(), &PolicySpec::from_name("ours").unwrap()).unwrap();
    sc.agents[1].policy = PolicySpec::External;
    sc.agents[1].noise = Default::default();
    sc.duration = 1.5;
    sc
}

async fn next_msg<S>(ws: &mut S) -> Option<ServerMsg>
where
    S: StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        match tokio::time::timeout(Duration::from_secs(10), ws.next()).await.ok()?? {
            Ok(Message::Text(t)) => return Some(serde_json::from_str(&t).expect("server sends valid messages")),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn session_over_websocket() {
    let dir = tempfile::tempdir().unwrap();
    let options = ServerOptions { output_dir: Some(dir.path().to_path_buf()), ..ServerOptions::default() };
    let server = bind(scenario(), "127.0.0.1:0".parse().unwrap(), options).await.unwrap();
    let url = format!("ws://{}/ws", server.local_addr);

    // wrong schema is refused
    let (mut bad, _) = tokio_tungstenite::connect_async(url.as_str()).await.unwrap();
    bad.send(Message::Text(r#"{"type":"hello","schema":2}"#.into())).await.unwrap();
    match next_msg(&mut bad).await {
        Some(ServerMsg::Hello { accepted, reason, .. }) => {
            assert!(!accepted);
            assert!(reason.unwrap().contains("schema"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(next_msg(&mut bad).await.is_none());

    // nothing advances while no client is connected
    tokio::time::sleep(Duration::from_millis(300)).await;

    let (mut ws, _) = tokio_tungstenite::connect_async(url.as_str()).await.unwrap();
    ws.send(Message::Text(r#"{"type":"hello","schema":1,"client":"test"}"#.into())).await.unwrap();
    let Some(ServerMsg::Hello { accepted: true, human_id, .. }) = next_msg(&mut ws).await else { panic!("not accepted") };
    assert_eq!(human_id, "human");
    ws.send(Message::Text("not json".into())).await.unwrap();

    let mut ticks = Vec::new();
    let mut thetas = Vec::new();
    let mut pressed_at = None;
    while let Some(msg) = next_msg(&mut ws).await {
        match msg {
            ServerMsg::State { state, .. } => {
                assert!(state.preview.is_empty() || state.preview.len() == 27);
                ticks.push(state.tick);
                thetas.push(state.agents[1].theta);
                // the client streams its key state every tick from tick 3 on
                if state.tick >= 3 {
                    let input = format!(r#"{{"type":"input","schema":1,"timestamp":0,"keys":{KEY_LEFT}}}"#);
                    ws.send(Message::Text(input)).await.unwrap();
                    pressed_at.get_or_insert(ticks.len() - 1);
                }
            }
            ServerMsg::Pause { reason, .. } if reason == "finished" => break,
            ServerMsg::Pause { .. } => {}
            ServerMsg::Hello { .. } => panic!("second hello"),
        }
    }
    assert_eq!(ticks.first(), Some(&1), "ticks advanced before the client joined");
    assert!(ticks.windows(2).all(|w| w[1] == w[0] + 1));
    assert_eq!(ticks.last(), Some(&15));
    // the turn shows up within two ticks of the key press
    let k = pressed_at.unwrap();
    let turned = thetas[k + 1..].iter().position(|th| (th - thetas[k]).abs() > 1e-6).unwrap();
    assert!(turned < 2, "first response after {} ticks", turned + 1);

    let summary = server.wait().await.unwrap();
    assert!(summary.complete);
    assert_eq!(summary.ticks, 15);
    assert_eq!(summary.malformed_messages, 1);

    let live = std::fs::read_to_string(summary.log_path.unwrap()).unwrap();
    let rec = Recording::from_json(&std::fs::read_to_string(summary.recording_path.unwrap()).unwrap()).unwrap();
    assert_eq!(replay(&rec).unwrap().log.to_json(), live);
}
