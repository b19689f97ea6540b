// Chat console: submit text + optional image, render routed results
// (diagnosis, box overlays, knowledge cards), inspect per-turn traces.
// One in-flight query at a time; history lives only in the DOM.
import { ApiClient, ApiError } from "./api.js";
import { classificationView, knowledgeCards, overlayBoxes, renderMode, traceRows, } from "./render.js";
const api = new ApiClient("");
const chatLog = document.getElementById("chat-log");
const form = document.getElementById("composer");
const textInput = document.getElementById("text-input");
const fileInput = document.getElementById("image-input");
const sendButton = document.getElementById("send-button");
const attachmentBar = document.getElementById("attachment");
const healthBadge = document.getElementById("health");
let attached = null;
let pending = false;
void api.health().then((h) => {
    const ready = Object.values(h.tools).filter(Boolean).length;
    healthBadge.textContent =
        `v${h.version} · ${h.kernel_backend} kernels · ${ready}/${Object.keys(h.tools).length} tools ready`;
}, () => {
    healthBadge.textContent = "service unreachable";
});
fileInput.addEventListener("change", () => {
    const file = fileInput.files?.[0];
    if (!file) {
        setAttachment(null);
        return;
    }
    const reader = new FileReader();
    reader.onload = () => {
        const dataUrl = String(reader.result);
        const probe = new Image();
        probe.onload = () => {
            setAttachment({
                base64: dataUrl.slice(dataUrl.indexOf(",") + 1),
                width: probe.naturalWidth,
                height: probe.naturalHeight,
                dataUrl,
            });
        };
        probe.src = dataUrl;
    };
    reader.readAsDataURL(file);
});
function setAttachment(image) {
    attached = image;
    attachmentBar.innerHTML = "";
    if (!image)
        return;
    const thumb = document.createElement("img");
    thumb.src = image.dataUrl;
    thumb.alt = "attached image";
    const note = document.createElement("span");
    note.textContent = `${image.width}x${image.height}`;
    const clear = document.createElement("button");
    clear.type = "button";
    clear.textContent = "remove";
    clear.onclick = () => {
        fileInput.value = "";
        setAttachment(null);
    };
    attachmentBar.append(thumb, note, clear);
}
form.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = textInput.value.trim();
    if (pending || (!text && !attached))
        return;
    void submitQuery(text, attached);
    textInput.value = "";
    fileInput.value = "";
    setAttachment(null);
});
async function submitQuery(text, image) {
    setPending(true);
    appendUserTurn(text, image);
    const thinking = appendNote("thinking…");
    try {
        const response = await api.postQuery(text, image ?? undefined);
        thinking.remove();
        appendAssistantTurn(response, image);
    }
    catch (error) {
        thinking.remove();
        if (error instanceof ApiError) {
            appendNote(`rejected: ${error.message}`, "error");
        }
        else {
            appendRetry(text, image, String(error));
        }
    }
    finally {
        setPending(false);
    }
}
function setPending(value) {
    pending = value;
    sendButton.disabled = value;
    textInput.disabled = value;
}
function appendUserTurn(text, image) {
    const turn = el("div", "turn user");
    if (text)
        turn.append(el("p", "bubble", text));
    if (image) {
        const thumb = document.createElement("img");
        thumb.className = "thumb";
        thumb.src = image.dataUrl;
        turn.append(thumb);
    }
    pushTurn(turn);
}
function appendNote(text, cls = "note") {
    const node = el("div", `turn ${cls}`, text);
    pushTurn(node);
    return node;
}
function appendRetry(text, image, reason) {
    const turn = el("div", "turn error");
    turn.append(el("p", "bubble", `network failure: ${reason}`));
    const retry = document.createElement("button");
    retry.type = "button";
    retry.textContent = "retry";
    retry.onclick = () => {
        turn.remove();
        void submitQuery(text, image);
    };
    turn.append(retry);
    pushTurn(turn);
}
function appendAssistantTurn(response, image) {
    const turn = el("div", "turn assistant");
    const mode = renderMode(response);
    if (mode === "detection" && image && response.detections) {
        turn.append(detectionFigure(image, response.detections));
    }
    if (mode === "classification" && response.tool_output?.kind === "classify") {
        const view = classificationView(response.tool_output);
        const chip = el("div", "diagnosis");
        chip.append(el("strong", "", view.name));
        chip.append(el("span", "pct", ` ${view.confidencePct}`));
        for (const runner of view.runnersUp) {
            chip.append(el("span", "runner", `· #${runner.label} ${runner.pct}`));
        }
        turn.append(chip);
    }
    turn.append(el("p", "bubble", response.answer));
    if (mode === "knowledge" && response.tool_output?.kind === "retrieve") {
        const rack = el("div", "cards");
        for (const card of knowledgeCards(response.tool_output)) {
            const node = el("article", "card");
            node.append(el("h3", "", `${card.rank}. ${card.name}`));
            for (const section of card.sections) {
                node.append(el("h4", "", section.title));
                node.append(el("p", "", section.body));
            }
            rack.append(node);
        }
        turn.append(rack);
    }
    if (mode === "clarification") {
        const prompt = document.createElement("button");
        prompt.type = "button";
        prompt.className = "upload-prompt";
        prompt.textContent = "attach an image";
        prompt.onclick = () => fileInput.click();
        turn.append(prompt);
    }
    turn.append(tracePanel(response));
    pushTurn(turn);
}
function detectionFigure(image, detections) {
    const figure = el("figure", "overlay-figure");
    const img = document.createElement("img");
    img.src = image.dataUrl;
    figure.append(img);
    img.onload = () => {
        const ratioX = img.clientWidth / image.width;
        const ratioY = img.clientHeight / image.height;
        for (const box of overlayBoxes(detections, ratioX, ratioY)) {
            const rect = el("div", "overlay-box");
            rect.style.left = `${box.left}px`;
            rect.style.top = `${box.top}px`;
            rect.style.width = `${box.width}px`;
            rect.style.height = `${box.height}px`;
            rect.style.borderColor = box.color;
            const tag = el("span", "overlay-label", box.label);
            tag.style.background = box.color;
            rect.append(tag);
            figure.append(rect);
        }
    };
    return figure;
}
function tracePanel(response) {
    const details = document.createElement("details");
    details.className = "trace";
    const summary = document.createElement("summary");
    summary.textContent = "routing trace";
    details.append(summary);
    const table = el("div", "trace-rows");
    details.append(table);
    let loaded = false;
    details.addEventListener("toggle", () => {
        if (!details.open || loaded)
            return;
        loaded = true;
        void api.getTrace(response.trace_id).then((trace) => {
            for (const row of traceRows(response.routing, trace.events)) {
                const line = el("div", "trace-row");
                line.append(el("span", "k", row.label), el("span", "v", row.value));
                table.append(line);
            }
        }, () => {
            table.textContent = "trace expired";
        });
    });
    return details;
}
function el(tag, className, text) {
    const node = document.createElement(tag);
    if (className)
        node.className = className;
    if (text !== undefined)
        node.textContent = text;
    return node;
}
function pushTurn(node) {
    chatLog.append(node);
    chatLog.scrollTop = chatLog.scrollHeight;
}
