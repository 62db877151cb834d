//! Websocket server: one interactive session per connection.

use std::sync::Arc;

use anyhow::Context;
use futures_util::{SinkExt, StreamExt};
use mosyn_core::model::Model;
use mosyn_core::synthesis::{InteractiveSession, StreamChunk, SynthesisError};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::{poses, ChannelMap, ClientMessage, ServerMessage, PROTOCOL_VERSION};

/// Accepts connections until the listener fails.
pub async fn serve(model: Arc<Model>, listener: TcpListener) -> anyhow::Result<()> {
    if !model.is_conditional() {
        anyhow::bail!("serving needs a conditional checkpoint");
    }
    loop {
        let (stream, peer) = listener.accept().await?;
        let model = model.clone();
        tokio::spawn(async move {
            if let Err(e) = handle(model, stream).await {
                log::warn!("connection {peer}: {e:#}");
            }
        });
    }
}

fn frames_message(chunk: StreamChunk) -> ServerMessage {
    ServerMessage::Frames {
        start_index: chunk.start,
        poses: poses(&chunk.motion),
    }
}

async fn handle(model: Arc<Model>, stream: TcpStream) -> anyhow::Result<()> {
    let mut ws = tokio_tungstenite::accept_async(stream).await.context("websocket handshake")?;
    let mut session = Some(InteractiveSession::new(model.clone())?);
    let hello = ServerMessage::Hello {
        version: PROTOCOL_VERSION,
        skeleton: model.skeleton.clone(),
        frame_time: model.skeleton.frame_time,
        r: model.halved_receptive_field(),
    };
    let channels = model.constraint_channels.clone().unwrap_or_default();
    let map = ChannelMap::new(&model.skeleton, &channels);
    send(&mut ws, &hello).await?;
    let mut last_seed = 0;

    while let Some(msg) = ws.next().await {
        let text = match msg? {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let parsed: ClientMessage = match serde_json::from_str(text.as_str()) {
            Ok(m) => m,
            Err(e) => {
                send(&mut ws, &ServerMessage::error("malformed", e.to_string())).await?;
                continue;
            }
        };
        match parsed {
            ClientMessage::Hello { .. } => send(&mut ws, &hello).await?,
            ClientMessage::Constraints { frames, seed } => {
                let map = match &map {
                    Ok(m) => m,
                    Err(e) => {
                        send(&mut ws, &ServerMessage::error("channel_mismatch", e.clone())).await?;
                        break;
                    }
                };
                let rows = map.to_rows(&frames);
                last_seed = seed;
                let mut s = session.take().expect("session present between messages");
                let (s, result) = tokio::task::spawn_blocking(move || {
                    let r = s.extend(&rows, seed);
                    (s, r)
                })
                .await?;
                session = Some(s);
                let reply = match result {
                    Ok(chunk) => frames_message(chunk),
                    Err(SynthesisError::EmptyExtension) => ServerMessage::error("empty", "no constraint frames"),
                    Err(e) => ServerMessage::error("generation", e.to_string()),
                };
                send(&mut ws, &reply).await?;
            }
            ClientMessage::Bye {} => {
                let mut s = session.take().expect("session present between messages");
                let (_, tail) = tokio::task::spawn_blocking(move || {
                    let r = s.finish(last_seed);
                    (s, r)
                })
                .await?;
                if let Ok(chunk) = tail {
                    if chunk.motion.frames() > 0 {
                        send(&mut ws, &frames_message(chunk)).await?;
                    }
                }
                send(&mut ws, &ServerMessage::Bye {}).await?;
                break;
            }
        }
    }
    let _ = ws.close(None).await;
    Ok(())
}

async fn send(
    ws: &mut tokio_tungstenite::WebSocketStream<TcpStream>,
    msg: &ServerMessage,
) -> anyhow::Result<()> {
    ws.send(Message::text(serde_json::to_string(msg)?)).await?;
    Ok(())
}
